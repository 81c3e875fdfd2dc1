"""HyperCEUNet: a parameter-conditioned UNet refining an initial channel grid.

A small hypernetwork maps the normalized channel parameters to the weights of a
3x3 pre-filter convolution that is applied per sample before the UNet. The UNet
has two pooling stages, a bottleneck with optional squeeze-and-excitation channel
attention and channel dropout, and a 3x3 output convolution.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .correlation import ChannelParams
from .nn import Tensor

DELAY_SCALE_S = 5e-6
DOPPLER_SCALE_HZ = 400.0
SNR_WINDOW_DB = (-5.0, 30.0)
KERNEL = 3
IN_CHANNELS = 2


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    prefilter_out: int = 8
    ca_reduction: int = 8
    dropout_p: float = 0.3
    hyper_hidden: tuple[int, int] = (16, 8)
    use_wiener_init: bool = True
    use_hyper_prefilter: bool = True
    use_ca: bool = True
    global_residual: bool = False
    zero_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hyper_hidden", tuple(int(h) for h in self.hyper_hidden))
        counts = (self.base_channels, self.prefilter_out, self.ca_reduction) + self.hyper_hidden
        if len(self.hyper_hidden) != 2 or any(c < 1 for c in counts):
            raise ValueError(f"invalid model widths in {self}")
        if self.use_ca and (4 * self.base_channels) % self.ca_reduction:
            raise ValueError("ca_reduction must divide the bottleneck width")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    @property
    def input_channels(self) -> int:
        return self.prefilter_out if self.use_hyper_prefilter else IN_CHANNELS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyper_hidden"] = list(self.hyper_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


PRESETS = {
    "UNET_BILINEAR": ModelConfig(use_wiener_init=False, use_hyper_prefilter=False, use_ca=False),
    "HYPERCE_BILINEAR": ModelConfig(use_wiener_init=False, use_hyper_prefilter=True, use_ca=False),
    "HYPERCE_WN": ModelConfig(use_wiener_init=True, use_hyper_prefilter=True, use_ca=False),
    "HYPERCE_WN_CA": ModelConfig(use_wiener_init=True, use_hyper_prefilter=True, use_ca=True),
}


@dataclass(frozen=True)
class NormalizedParams:
    mean_delay: float
    delay_width: float
    doppler: float
    snr: float

    def __post_init__(self):
        for name in ("mean_delay", "delay_width", "doppler", "snr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"normalized {name} must lie in [0, 1], got {v}")

    @classmethod
    def from_channel_params(cls, p: ChannelParams) -> "NormalizedParams":
        lo, hi = SNR_WINDOW_DB
        snr_db = p.snr_db
        return cls(
            mean_delay=float(np.clip(p.mean_delay_s / DELAY_SCALE_S, 0.0, 1.0)),
            delay_width=float(np.clip(p.delay_width_s / DELAY_SCALE_S, 0.0, 1.0)),
            doppler=float(np.clip(p.doppler_hz / DOPPLER_SCALE_HZ, 0.0, 1.0)),
            snr=1.0 if np.isinf(snr_db) else float(np.clip((snr_db - lo) / (hi - lo), 0.0, 1.0)),
        )

    def vector(self) -> np.ndarray:
        return np.array([self.mean_delay, self.delay_width, self.doppler, self.snr], dtype=np.float32)


def stack_params(ps) -> np.ndarray:
    return np.stack([p.vector() for p in ps]).astype(np.float32)


def _layer_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, weight shape, fan_in) in a fixed order; each weight has a matching bias."""
    c = cfg.base_channels
    k2 = KERNEL * KERNEL
    conv = lambda o, i: ((o, i, KERNEL, KERNEL), i * k2)
    up = lambda i, o: ((i, o, 2, 2), i * 4)
    out = []
    if cfg.use_hyper_prefilter:
        h1, h2 = cfg.hyper_hidden
        n_gen = cfg.prefilter_out * IN_CHANNELS * k2 + cfg.prefilter_out
        out += [("hyper.fc1", (h1, 4), 4), ("hyper.fc2", (h2, h1), h1), ("hyper.fc3", (n_gen, h2), h2)]
    out += [("enc1.conv1",) + conv(c, cfg.input_channels), ("enc1.conv2",) + conv(c, c),
            ("enc2.conv1",) + conv(2 * c, c), ("enc2.conv2",) + conv(2 * c, 2 * c),
            ("bottleneck.conv1",) + conv(4 * c, 2 * c), ("bottleneck.conv2",) + conv(4 * c, 4 * c)]
    if cfg.use_ca:
        r = 4 * c // cfg.ca_reduction
        out += [("ca.fc1", (r, 4 * c), 4 * c), ("ca.fc2", (4 * c, r), r)]
    out += [("dec1.up",) + up(4 * c, 2 * c), ("dec1.conv1",) + conv(2 * c, 4 * c),
            ("dec1.conv2",) + conv(2 * c, 2 * c),
            ("dec2.up",) + up(2 * c, c), ("dec2.conv1",) + conv(c, 2 * c), ("dec2.conv2",) + conv(c, c),
            ("out",) + conv(IN_CHANNELS, c)]
    return out


def _bias_len(name: str, shape) -> int:
    return shape[1] if name.endswith(".up") else shape[0]


class Model:
    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, named: dict[str, np.ndarray]):
        if set(named) != set(self.params):
            missing = set(self.params) ^ set(named)
            raise ValueError(f"checkpoint layers do not match model: {sorted(missing)}")
        for k, t in self.params.items():
            if named[k].shape != t.shape:
                raise ValueError(f"{k}: checkpoint shape {named[k].shape} != {t.shape}")
            t.data = np.array(named[k], dtype=t.dtype)

    def astype(self, dtype) -> "Model":
        params = OrderedDict((k, Tensor(v.data.astype(dtype), requires_grad=True, name=k))
                             for k, v in self.params.items())
        return Model(self.config, params)


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Uniform fan-in (He) initialization with zero biases, drawn in layer order."""
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, Tensor] = OrderedDict()
    k2 = KERNEL * KERNEL
    for name, shape, fan_in in _layer_shapes(config):
        bound = np.sqrt(6.0 / fan_in)
        bias = np.zeros(_bias_len(name, shape), dtype=np.float32)
        if name == "hyper.fc3":
            # the output is a conv kernel: start the bias at a regular kernel draw and
            # let the parameter-dependent part begin at a comparable but smaller scale
            pf_fan = IN_CHANNELS * k2
            n_kernel = config.prefilter_out * pf_fan
            bias[:n_kernel] = rng.uniform(-1, 1, n_kernel) * np.sqrt(6.0 / pf_fan)
            bound = np.sqrt(6.0 / pf_fan) / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, shape).astype(np.float32)
        if name == "out" and config.zero_output:
            w[:] = 0.0
        params[name + ".weight"] = nn.parameter(w, name + ".weight")
        params[name + ".bias"] = nn.parameter(bias, name + ".bias")
    return Model(config, params)


def _as_param_matrix(p, batch: int | None = None) -> np.ndarray:
    if isinstance(p, NormalizedParams):
        m = p.vector()[None, :]
    elif isinstance(p, (list, tuple)) and p and isinstance(p[0], NormalizedParams):
        m = stack_params(p)
    else:
        m = np.atleast_2d(np.asarray(p, dtype=np.float32))
    if m.shape[-1] != 4:
        raise ValueError(f"normalized parameters need 4 components, got shape {m.shape}")
    if batch is not None and m.shape[0] == 1 and batch > 1:
        m = np.repeat(m, batch, axis=0)
    if batch is not None and m.shape[0] != batch:
        raise ValueError(f"{m.shape[0]} parameter rows for a batch of {batch}")
    return m


def hyper_generate(model: Model, p) -> tuple[Tensor, Tensor]:
    """Generate the pre-filter kernel and bias from normalized parameters.

    A single NormalizedParams gives (out, 2, 3, 3) and (out,); a (B, 4) array or list
    gives a per-sample batch (B, out, 2, 3, 3) and (B, out).
    """
    if not model.config.use_hyper_prefilter:
        raise ValueError("model has no hypernetwork pre-filter")
    single = isinstance(p, NormalizedParams)
    x = Tensor(_as_param_matrix(p).astype(model["hyper.fc1.weight"].dtype))
    h = nn.relu(nn.linear(x, model["hyper.fc1.weight"], model["hyper.fc1.bias"]))
    h = nn.relu(nn.linear(h, model["hyper.fc2.weight"], model["hyper.fc2.bias"]))
    out = nn.linear(h, model["hyper.fc3.weight"], model["hyper.fc3.bias"])
    co = model.config.prefilter_out
    n_kernel = co * IN_CHANNELS * KERNEL * KERNEL
    kernel, bias = nn.split_last(out, [n_kernel, co])
    b = x.shape[0]
    if single:
        return nn.reshape(kernel, (co, IN_CHANNELS, KERNEL, KERNEL)), nn.reshape(bias, (co,))
    return nn.reshape(kernel, (b, co, IN_CHANNELS, KERNEL, KERNEL)), bias


def channel_attention(model: Model, f: Tensor) -> Tensor:
    z = nn.global_avg_pool(f)
    a = nn.relu(nn.linear(z, model["ca.fc1.weight"], model["ca.fc1.bias"]))
    a = nn.sigmoid(nn.linear(a, model["ca.fc2.weight"], model["ca.fc2.bias"]))
    return nn.scale_channels(f, a)


def _conv_relu(model: Model, x: Tensor, name: str) -> Tensor:
    return nn.relu(nn.conv2d(x, model[name + ".weight"], model[name + ".bias"]))


def forward(model: Model, init_grid, p=None, training: bool = False, seed: int = 0,
            step: int = 0) -> Tensor:
    """Map a (B, 2, H, W) initial estimate to a refined (B, 2, H, W) grid.

    Dropout masks are keyed by (seed, step); with training off they are never drawn.
    """
    cfg = model.config
    dtype = model["out.weight"].dtype
    x = init_grid if isinstance(init_grid, Tensor) else Tensor(np.asarray(init_grid, dtype=dtype))
    if x.ndim != 4 or x.shape[1] != IN_CHANNELS:
        raise ValueError(f"expected a (B, 2, H, W) input, got {x.shape}")
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise ValueError(f"spatial dims {x.shape[2:]} must be divisible by 4")
    h = x
    if cfg.use_hyper_prefilter:
        if p is None:
            raise ValueError("the hypernetwork pre-filter needs channel parameters")
        w, b = hyper_generate(model, _as_param_matrix(p, x.shape[0]))
        h = nn.conv2d(h, w, b)
    e1 = _conv_relu(model, _conv_relu(model, h, "enc1.conv1"), "enc1.conv2")
    e2 = _conv_relu(model, _conv_relu(model, nn.maxpool2(e1), "enc2.conv1"), "enc2.conv2")
    m = _conv_relu(model, _conv_relu(model, nn.maxpool2(e2), "bottleneck.conv1"), "bottleneck.conv2")
    if cfg.use_ca:
        m = channel_attention(model, m)
    m = nn.channel_dropout(m, cfg.dropout_p, training, key=(seed, step, 0))
    d = nn.conv_transpose2d(m, model["dec1.up.weight"], model["dec1.up.bias"])
    d = _conv_relu(model, _conv_relu(model, nn.concat_channels(d, e2), "dec1.conv1"), "dec1.conv2")
    d = nn.conv_transpose2d(d, model["dec2.up.weight"], model["dec2.up.bias"])
    d = _conv_relu(model, _conv_relu(model, nn.concat_channels(d, e1), "dec2.conv1"), "dec2.conv2")
    y = nn.conv2d(d, model["out.weight"], model["out.bias"])
    if cfg.global_residual:
        y = nn.add(y, x)
    return y


def count_parameters(model: Model) -> dict[str, int]:
    """Trainable scalars per group; the backbone is counted as if fed the raw 2-channel grid."""
    cfg = model.config
    groups = {"backbone": 0, "hypernetwork": 0, "ca": 0, "prefilter_extra": 0}
    for name, t in model.params.items():
        if name.startswith("hyper."):
            groups["hypernetwork"] += t.size
        elif name.startswith("ca."):
            groups["ca"] += t.size
        else:
            groups["backbone"] += t.size
    extra = (cfg.input_channels - IN_CHANNELS) * cfg.base_channels * KERNEL * KERNEL
    groups["backbone"] -= extra
    groups["prefilter_extra"] = extra
    groups["total"] = sum(t.size for t in model.params.values())
    return groups


def grid_to_planes(grid: np.ndarray) -> np.ndarray:
    """Complex (..., K, N) grids to real (..., 2, K, N) planes (real, imaginary)."""
    g = np.asarray(grid)
    return np.stack([g.real, g.imag], axis=-3).astype(np.float32)


def planes_to_grid(planes: np.ndarray) -> np.ndarray:
    p = np.asarray(planes, dtype=np.float64)
    return p[..., 0, :, :] + 1j * p[..., 1, :, :]


def save_model(path, model: Model, step: int = 0, optimizer=None, history: dict | None = None):
    """Write the CEWT checkpoint plus a model-card JSON next to it."""
    nn.save_checkpoint(path, model.named_arrays(), step=step, optimizer=optimizer,
                       extra={"config": model.config.to_dict()})
    card = {
        "config": model.config.to_dict(),
        "parameters": count_parameters(model),
        "step": step,
        "history": summarize_history(history) if history else None,
    }
    with open(str(path) + ".card.json", "w") as f:
        json.dump(card, f, indent=2, sort_keys=True)


def load_model(path, config: ModelConfig | None = None) -> tuple[Model, dict]:
    named, header, _ = nn.load_checkpoint(path)
    if config is None:
        stored = header.get("extra", {}).get("config")
        if stored is None:
            raise ValueError(f"{path}: checkpoint has no stored config; pass one explicitly")
        config = ModelConfig.from_dict(stored)
    model = build_model(config, seed=0)
    model.load_arrays(named)
    return model, header


def summarize_history(history: dict) -> dict:
    out = {}
    for k, v in history.items():
        if isinstance(v, list) and v:
            out[k] = {"first": v[0], "last": v[-1], "best": min(v), "epochs": len(v)}
    return out
