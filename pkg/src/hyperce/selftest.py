"""Quick built-in checks: gradient checks, kernel oracles and parameter counts."""

from __future__ import annotations

import numpy as np

from . import nn
from .correlation import ChannelParams, bessel_j0, build_wiener_matrices
from .model import PRESETS, ModelConfig, build_model, count_parameters, forward


def _j0_reference(x: np.ndarray) -> np.ndarray:
    # direct power series with exact term recursion; fine for |x| <= 20 in double precision
    x = np.asarray(x, dtype=np.float64)
    term = np.ones_like(x)
    total = term.copy()
    for k in range(1, 120):
        term = term * (-(x * x) / 4.0) / (k * k)
        total += term
    return total


def _op_checks(dtype) -> dict[str, float]:
    rng = np.random.default_rng(3)
    r = lambda *s: rng.standard_normal(s)
    t1, t2, t3 = r(2, 3, 4, 4), r(2, 2, 8, 8), r(2, 3, 2, 2)
    checks = {
        "conv2d": (lambda x, w, b: nn.mse_loss(nn.conv2d(x, w, b), t1), [r(2, 2, 4, 4), r(3, 2, 3, 3), r(3)]),
        "conv2d_per_sample": (lambda x, w, b: nn.mse_loss(nn.conv2d(x, w, b), t1),
                              [r(2, 2, 4, 4), r(2, 3, 2, 3, 3), r(2, 3)]),
        "conv_transpose2d": (lambda x, w, b: nn.mse_loss(nn.conv_transpose2d(x, w, b), t2),
                             [r(2, 3, 4, 4), r(3, 2, 2, 2), r(2)]),
        "maxpool2": (lambda x: nn.mse_loss(nn.maxpool2(x), t3), [r(2, 3, 4, 4)]),
        "fully_connected": (lambda x, w, b: nn.mse_loss(nn.fully_connected(x, w, b), np.ones((4, 3))),
                            [r(4, 5), r(3, 5), r(3)]),
        "activations": (lambda x: nn.mse_loss(nn.sigmoid(nn.relu(x)), np.full((3, 4), 0.3)), [r(3, 4)]),
        "attention_ops": (lambda x, s: nn.mse_loss(
            nn.concat_channels(nn.scale_channels(x, s), x), np.zeros((2, 6, 4, 4))),
            [r(2, 3, 4, 4), r(2, 3)]),
        "global_avg_pool": (lambda x: nn.mse_loss(nn.global_avg_pool(x), np.ones((2, 3))), [r(2, 3, 4, 4)]),
    }
    return {k: nn.grad_check(f, xs, dtype=dtype).max_rel_error for k, (f, xs) in checks.items()}


def model_grad_check(dtype=np.float64, config: ModelConfig | None = None, max_coords: int = 6,
                     seed: int = 0, joint: bool = False) -> float:
    """Finite-difference check of the full network on a small 8x4 grid.

    Samples max_coords coordinates per parameter tensor, or with joint set, probes
    that many random directions spanning all parameters at once.
    """
    cfg = config or PRESETS["HYPERCE_WN_CA"]
    model = build_model(cfg, seed).astype(dtype)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((2, 2, 8, 4))
    y = rng.standard_normal((2, 2, 8, 4))
    p = rng.random((2, 4))
    names = list(model.params)

    def f(*ws):
        for n, w in zip(names, ws):
            model.params[n] = w
        return nn.mse_loss(forward(model, nn.Tensor(x.astype(dtype)), p, training=True, seed=5), y)

    return nn.grad_check(f, [model.params[n].data for n in names], dtype=dtype,
                         max_coords=max_coords, seed=seed, directional=joint,
                         joint=joint).max_rel_error


def run_selftest() -> dict[str, bool]:
    results = {}
    for k, e in _op_checks(np.float64).items():
        results[f"gradcheck64:{k}"] = e < 1e-5
    for k, e in _op_checks(np.float32).items():
        results[f"gradcheck32:{k}"] = e < 1e-3
    results["gradcheck64:model"] = model_grad_check() < 1e-5
    x = np.linspace(0.0, 20.0, 1001)
    results["bessel_j0"] = float(np.max(np.abs(bessel_j0(x) - _j0_reference(x)))) < 1e-7
    counts = count_parameters(build_model(PRESETS["HYPERCE_WN_CA"]))
    results["parameter_counts"] = (counts["backbone"], counts["hypernetwork"], counts["ca"]) == (117170, 1584, 1096)
    params = ChannelParams(1e-6, 0.5e-6, 100.0, 10.0)
    from .numerology import default_numerology
    num = default_numerology()
    pos = np.array([[0, 0], [2, 0], [0, 9], [2, 9]])
    cross, auto = build_wiener_matrices(pos, pos, params, num)
    results["wiener_hermitian"] = bool(np.allclose(auto, auto.conj().T, atol=1e-12) and np.allclose(cross, auto))
    return results
