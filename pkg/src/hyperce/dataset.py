"""Scenario sweeps and the CEDS dataset file.

Layout: b"CEDS", version byte, 8-byte little-endian manifest length, UTF-8 JSON
manifest, then for each sample in index order the real and imaginary planes of
rx_data_grid, truth, an empty LS placeholder and rx_trs, as little-endian float32,
subcarrier-major.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel import (PROFILE_NAMES, FadingConfig, Observation, generate_channel,
                      pilot_symbols, simulate_observation, tdl_profile)
from .correlation import ChannelParams
from .numerology import Numerology, ResourceGrid, default_numerology, dmrs_pattern, trs_pattern
from .params import estimate_params

log = logging.getLogger(__name__)

MAGIC = b"CEDS"
VERSION = 1
TRAIN_FRACTION = 0.8
_SPLIT_SALT = 0x5D11


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSweep:
    profiles: tuple[str, ...] = PROFILE_NAMES
    dopplers_hz: tuple[float, ...] = (5.0, 100.0, 300.0)
    snrs_db: tuple[float, ...] = tuple(float(s) for s in range(0, 21, 2))
    delay_spread_s: float = 100e-9

    def __post_init__(self):
        for name in ("profiles", "dopplers_hz", "snrs_db"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise ValueError(f"sweep {name} must be nonempty")
        for p in self.profiles:
            tdl_profile(p)
        if self.delay_spread_s <= 0:
            raise ValueError("delay spread must be positive")

    def configs(self) -> list[tuple[str, float, float]]:
        return [(p, float(d), float(s)) for p in self.profiles for d in self.dopplers_hz
                for s in self.snrs_db]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSweep":
        return cls(**d)


def split_sizes(total: int) -> tuple[int, int]:
    n_train = int(np.floor(TRAIN_FRACTION * total))
    return n_train, total - n_train


def _split(total: int, seed: int) -> tuple[list[int], list[int]]:
    perm = np.random.default_rng([seed, _SPLIT_SALT]).permutation(total)
    n_train, _ = split_sizes(total)
    return sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())


@dataclass
class Dataset:
    manifest: dict
    rx_data: np.ndarray
    truth: np.ndarray
    rx_trs: np.ndarray
    num: Numerology = field(init=False)

    def __post_init__(self):
        self.num = Numerology.from_dict(self.manifest["numerology"])

    def __len__(self) -> int:
        return len(self.manifest["samples"])

    @property
    def samples(self) -> list[dict]:
        return self.manifest["samples"]

    @property
    def sweep(self) -> ScenarioSweep:
        return ScenarioSweep.from_dict(self.manifest["sweep"])

    def split(self, name: str) -> list[int]:
        return list(self.manifest["split"][name])

    def observation(self, i: int) -> Observation:
        s = self.samples[i]
        snr_db = float(s["snr_db"])
        return Observation(
            rx_data_grid=ResourceGrid(self.rx_data[i]),
            rx_trs=self.rx_trs[i],
            tx_dmrs=pilot_symbols(dmrs_pattern(self.num)),
            tx_trs=pilot_symbols(trs_pattern(self.num)),
            snr_db=snr_db,
            noise_var=float(10.0 ** (-snr_db / 10.0)),
            truth=ResourceGrid(self.truth[i]),
        )

    def true_params(self, i: int) -> ChannelParams:
        return ChannelParams.from_dict(self.samples[i]["true_params"])

    def est_params(self, i: int) -> ChannelParams | None:
        d = self.samples[i].get("est_params")
        return None if d is None else ChannelParams.from_dict(d)

    def has_estimates(self) -> bool:
        return all("est_params" in s for s in self.samples)

    def cells(self, indices=None) -> dict[tuple[str, float, float], list[int]]:
        """Sample indices grouped by (profile, doppler, snr) in sweep order."""
        out: dict[tuple[str, float, float], list[int]] = {}
        for i in (range(len(self)) if indices is None else indices):
            s = self.samples[i]
            out.setdefault((s["profile"], float(s["doppler_hz"]), float(s["snr_db"])), []).append(i)
        return out


def _sample_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


def generate_dataset(sweep: ScenarioSweep, per_config: int, out_path=None, seed: int = 0,
                     num: Numerology | None = None, n_sinusoids: int = 32) -> Dataset:
    """Simulate per_config observations for every sweep configuration.

    Sample i uses seed ^ i for both its fading realization and its noise/data draw,
    so any sample can be regenerated on its own.
    """
    if per_config < 1:
        raise ValueError("per_config must be >= 1")
    num = num or default_numerology()
    dmrs, trs = dmrs_pattern(num), trs_pattern(num)
    configs = sweep.configs()
    total = len(configs) * per_config
    rx_data = np.empty((total,) + num.data_shape, dtype=np.complex64)
    truth = np.empty_like(rx_data)
    rx_trs = np.empty((total,) + trs.shape, dtype=np.complex64)
    samples = []
    for c, (prof, fd, snr) in enumerate(configs):
        profile = tdl_profile(prof)
        for j in range(per_config):
            i = c * per_config + j
            s = _sample_seed(seed, i)
            chan = generate_channel(num, profile, FadingConfig(sweep.delay_spread_s, fd, n_sinusoids, s))
            obs = simulate_observation(chan, num, dmrs, trs, snr, s)
            rx_data[i] = obs.rx_data_grid.values
            truth[i] = obs.truth.values
            rx_trs[i] = obs.rx_trs
            tp = chan.true_params
            true = ChannelParams(tp.mean_delay_s, tp.delay_width_s, tp.doppler_hz, obs.snr_linear)
            samples.append({"index": i, "profile": prof, "doppler_hz": fd, "snr_db": snr,
                            "seed": s, "true_params": true.to_dict()})
    train, val = _split(total, seed)
    manifest = {
        "format": "CEDS",
        "version": VERSION,
        "numerology": num.to_dict(),
        "sweep": sweep.to_dict(),
        "per_config": per_config,
        "seed": int(seed),
        "n_sinusoids": n_sinusoids,
        "counts": {"total": total, "train": len(train), "validation": len(val)},
        "split": {"train": train, "validation": val},
        "samples": samples,
    }
    ds = Dataset(manifest, rx_data, truth, rx_trs)
    if out_path is not None:
        write_dataset(ds, out_path)
    return ds


def annotate_estimates(ds: Dataset, refine: bool = True) -> Dataset:
    """Attach estimated channel parameters (from each sample's TRS) to the manifest."""
    for i, s in enumerate(ds.samples):
        est = estimate_params(ds.observation(i), ds.num, refine=refine)
        s["est_params"] = est.params.to_dict()
        s["est_phase_ambiguous"] = bool(est.diagnostics.phase_ambiguous)
    return ds


def _planes(a: np.ndarray) -> bytes:
    return np.stack([a.real, a.imag]).astype("<f4").tobytes()


def write_dataset(ds: Dataset, path):
    blob = json.dumps(ds.manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for i in range(len(ds)):
            f.write(_planes(ds.rx_data[i]))
            f.write(_planes(ds.truth[i]))
            f.write(_planes(ds.rx_trs[i]))


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DatasetError(f"{path}: not a CEDS dataset")
    if raw[4] != VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {raw[4]}")
    (mlen,) = struct.unpack_from("<Q", raw, 5)
    start = 13 + mlen
    try:
        manifest = json.loads(raw[13:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: corrupt manifest") from exc
    num = Numerology.from_dict(manifest["numerology"])
    kd, nd = num.data_shape
    trs = trs_pattern(num)
    kt, nt = trs.shape
    n = len(manifest["samples"])
    per = 2 * (2 * kd * nd + kt * nt)
    body = np.frombuffer(raw, dtype="<f4", offset=start)
    if body.size != n * per:
        raise DatasetError(f"{path}: expected {n * per} floats of sample data, found {body.size}")
    body = body.reshape(n, per)
    a, b = 2 * kd * nd, 4 * kd * nd

    def cplx(block, shape):
        planes = block.reshape((n, 2) + shape)
        return (planes[:, 0] + 1j * planes[:, 1]).astype(np.complex64)

    return Dataset(manifest, cplx(body[:, :a], (kd, nd)), cplx(body[:, a:b], (kd, nd)),
                   cplx(body[:, b:], (kt, nt)))
