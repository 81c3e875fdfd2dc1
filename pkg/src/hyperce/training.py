"""Input preparation, mini-batch Adam training and batched inference."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .dataset import Dataset, DatasetError
from .estimators import bilinear_init, ls_estimate, wiener_estimate
from .model import Model, NormalizedParams, forward, grid_to_planes
from .numerology import dmrs_pattern

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or not self.lr > 0:
            raise ValueError(f"invalid training config {self}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PreparedInputs:
    init: np.ndarray      # (N, 2, K, T) float32 initial estimate planes
    target: np.ndarray    # (N, 2, K, T) float32 truth planes
    params: np.ndarray    # (N, 4) normalized channel parameters
    indices: list[int]


def sample_params(ds: Dataset, i: int, oracle: bool = False):
    p = ds.true_params(i) if oracle else ds.est_params(i)
    if p is None:
        raise DatasetError(f"sample {i} carries no estimated parameters; run estimate-params first")
    return p


def initial_estimate(ds: Dataset, i: int, wiener: bool, oracle: bool = False) -> np.ndarray:
    """Complex full-grid initial estimate from the DMRS LS values of sample i."""
    obs = ds.observation(i)
    pilots = ls_estimate(obs, dmrs_pattern(ds.num))
    if wiener:
        return wiener_estimate(pilots, sample_params(ds, i, oracle), ds.num).values.values
    return bilinear_init(pilots, ds.num).values.values


def prepare_inputs(ds: Dataset, indices, wiener: bool, need_params: bool = True,
                   oracle: bool = False) -> PreparedInputs:
    indices = list(indices)
    init = np.stack([grid_to_planes(initial_estimate(ds, i, wiener, oracle)) for i in indices])
    target = grid_to_planes(ds.truth[indices])
    if need_params:
        params = np.stack([NormalizedParams.from_channel_params(sample_params(ds, i, oracle)).vector()
                           for i in indices])
    else:
        params = np.zeros((len(indices), 4), dtype=np.float32)
    return PreparedInputs(init, target, params, indices)


def needs_params(model: Model) -> bool:
    return model.config.use_hyper_prefilter or model.config.use_wiener_init


def per_sample_nmse(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, pred.ndim))
    err = np.sum((pred.astype(np.float64) - target) ** 2, axis=axes)
    return err / np.sum(target.astype(np.float64) ** 2, axis=axes)


def predict(model: Model, inputs: PreparedInputs, batch_size: int = 128) -> np.ndarray:
    out = []
    with nn.no_grad():
        for a in range(0, len(inputs.indices), batch_size):
            sl = slice(a, a + batch_size)
            out.append(forward(model, inputs.init[sl], inputs.params[sl], training=False).data)
    return np.concatenate(out) if out else np.empty_like(inputs.init)


def train(model: Model, ds: Dataset, tc: TrainConfig, train_inputs: PreparedInputs | None = None,
          val_inputs: PreparedInputs | None = None, callback=None) -> tuple[Model, dict]:
    """Minimize sum-of-squares / batch with Adam; returns the trained model and per-epoch history.

    Shuffling and dropout are driven by tc.seed only, so identical inputs give an
    identical history.
    """
    wiener = model.config.use_wiener_init
    need = needs_params(model)
    if train_inputs is None:
        train_inputs = prepare_inputs(ds, ds.split("train"), wiener, need)
    if val_inputs is None and ds.split("validation"):
        val_inputs = prepare_inputs(ds, ds.split("validation"), wiener, need)
    n = len(train_inputs.indices)
    if n == 0:
        raise DatasetError("training split is empty")
    opt = nn.Adam(model.parameters(), lr=tc.lr)
    rng = np.random.default_rng([tc.seed, 0x7A1])
    history = {"train_loss": [], "train_nmse": [], "val_nmse": []}
    step = 0
    for epoch in range(tc.epochs):
        perm = rng.permutation(n)
        loss_sum, nmse_sum = 0.0, 0.0
        for a in range(0, n, tc.batch_size):
            idx = perm[a:a + tc.batch_size]
            x, y, p = train_inputs.init[idx], train_inputs.target[idx], train_inputs.params[idx]
            opt.zero_grad()
            pred = forward(model, x, p, training=True, seed=tc.seed, step=step)
            loss = nn.mse_loss(pred, y)
            loss.backward()
            opt.step()
            step += 1
            loss_sum += loss.item() * len(idx)
            nmse_sum += float(per_sample_nmse(pred.data, y).sum())
        history["train_loss"].append(loss_sum / n)
        history["train_nmse"].append(nmse_sum / n)
        if val_inputs is not None and val_inputs.indices:
            history["val_nmse"].append(float(per_sample_nmse(predict(model, val_inputs), val_inputs.target).mean()))
        log.info("epoch %d: loss %.4f train nmse %.4g val nmse %s", epoch + 1, history["train_loss"][-1],
                 history["train_nmse"][-1], history["val_nmse"][-1] if history["val_nmse"] else "-")
        if callback is not None:
            callback(epoch, history)
    history["steps"] = step
    return model, history
