"""Tapped-delay-line fading channels with Jakes Doppler, and noisy pilot observations."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .correlation import ChannelParams, sinc
from .numerology import Numerology, PilotPattern, ResourceGrid

# 3GPP TR 38.901 TDL profiles: normalized delays and tap powers in dB
_TDL_TABLES = {
    "TDL-A": (
        [0.0000, 0.3819, 0.4025, 0.5868, 0.4610, 0.5375, 0.6708, 0.5750, 0.7618, 1.5375,
         1.8978, 2.2242, 2.1718, 2.4942, 2.5119, 3.0582, 4.0810, 4.4579, 4.5695, 4.7966,
         5.0066, 5.3043, 9.6586],
        [-13.4, 0.0, -2.2, -4.0, -6.0, -8.2, -9.9, -10.5, -7.5, -15.9, -6.6, -16.7, -12.4,
         -15.2, -10.8, -11.3, -12.7, -16.2, -18.3, -18.9, -16.6, -19.9, -29.7],
    ),
    "TDL-B": (
        [0.0000, 0.1072, 0.2155, 0.2095, 0.2870, 0.2986, 0.3752, 0.5055, 0.3681, 0.3697,
         0.5700, 0.5283, 1.1021, 1.2756, 1.5474, 1.7842, 2.0169, 2.8294, 3.0219, 3.6187,
         4.1067, 4.2790, 4.7834],
        [0.0, -2.2, -4.0, -3.2, -9.8, -1.2, -3.4, -5.2, -7.6, -3.0, -8.9, -9.0, -4.8, -5.7,
         -7.5, -1.9, -7.6, -12.2, -9.8, -11.4, -14.9, -9.2, -11.3],
    ),
    "TDL-C": (
        [0.0000, 0.2099, 0.2219, 0.2329, 0.2176, 0.6366, 0.6448, 0.6560, 0.6584, 0.7935,
         0.8213, 0.9336, 1.2285, 1.3083, 2.1704, 2.7105, 4.2589, 4.6003, 5.4902, 5.6077,
         6.3065, 6.6374, 7.0427, 8.6523],
        [-4.4, -1.2, -3.5, -5.2, -2.5, 0.0, -2.2, -3.9, -7.4, -7.1, -10.7, -11.1, -5.1,
         -6.8, -8.7, -13.2, -13.9, -13.9, -15.8, -17.1, -16.0, -15.7, -21.6, -22.8],
    ),
}

PROFILE_NAMES = tuple(_TDL_TABLES)
WIDTH_FIT_MAX_LAG = 24


@dataclass(frozen=True)
class TdlProfile:
    name: str
    normalized_delays: tuple[float, ...]
    tap_powers_db: tuple[float, ...]

    def __post_init__(self):
        if len(self.normalized_delays) != len(self.tap_powers_db):
            raise ValueError("delay and power lists differ in length")
        if min(self.normalized_delays) < 0 or self.normalized_delays[0] != 0:
            raise ValueError("delays must be non-negative and start at zero")

    @property
    def linear_powers(self) -> np.ndarray:
        p = 10.0 ** (np.asarray(self.tap_powers_db) / 10.0)
        return p / p.sum()


def tdl_profile(name: str) -> TdlProfile:
    if name not in _TDL_TABLES:
        raise ValueError(f"unknown TDL profile {name!r}; expected one of {PROFILE_NAMES}")
    delays, powers = _TDL_TABLES[name]
    # shift powers so the linear sum is exactly one
    p = 10.0 ** (np.asarray(powers) / 10.0)
    offset = 10.0 * np.log10(p.sum())
    return TdlProfile(name, tuple(delays), tuple(float(x - offset) for x in powers))


@dataclass(frozen=True)
class FadingConfig:
    delay_spread_s: float = 100e-9
    doppler_hz: float = 100.0
    n_sinusoids: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.delay_spread_s <= 0:
            raise ValueError("delay spread must be positive")
        if self.doppler_hz < 0:
            raise ValueError("doppler must be non-negative")
        if self.n_sinusoids < 8:
            raise ValueError("at least 8 sinusoids are required")


@dataclass
class ChannelRealization:
    wideband: ResourceGrid
    true_params: ChannelParams


@dataclass
class Observation:
    rx_data_grid: ResourceGrid
    rx_trs: np.ndarray
    tx_dmrs: np.ndarray
    tx_trs: np.ndarray
    snr_db: float
    noise_var: float
    truth: ResourceGrid

    @property
    def snr_linear(self) -> float:
        return float(10.0 ** (self.snr_db / 10.0))


def qpsk(rng: np.random.Generator, shape) -> np.ndarray:
    bits = rng.integers(0, 2, size=(2,) + tuple(np.atleast_1d(shape)))
    return ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / np.sqrt(2)


_PILOT_KEYS = {"DMRS": 0x444D5253, "TRS": 0x545253}


def pilot_symbols(pattern: PilotPattern) -> np.ndarray:
    """Known QPSK pilot sequence for a pattern; fixed, independent of any sample seed."""
    rng = np.random.default_rng(_PILOT_KEYS[pattern.kind.value])
    return qpsk(rng, pattern.shape)


def jakes_process(n_symbols: int, doppler_hz: float, symbol_duration_s: float,
                  n_sinusoids: int, rng: np.random.Generator,
                  start: int = 0) -> np.ndarray:
    """Unit-power complex fading process with autocorrelation J0(2 pi fD Ts dn).

    Quadrant-spaced arrival angles with one random rotation, independent random
    phases for the in-phase and quadrature sums.
    """
    m = n_sinusoids
    theta = rng.uniform(-np.pi, np.pi)
    phi = rng.uniform(-np.pi, np.pi, m)
    psi = rng.uniform(-np.pi, np.pi, m)
    alpha = (2 * np.pi * np.arange(1, m + 1) - np.pi + theta) / (4 * m)
    t = (start + np.arange(n_symbols)) * symbol_duration_s
    w = 2 * np.pi * doppler_hz
    gc = np.cos(w * np.outer(t, np.cos(alpha)) + phi).sum(axis=1)
    gs = np.cos(w * np.outer(t, np.sin(alpha)) + psi).sum(axis=1)
    return (gc + 1j * gs) / np.sqrt(m)


def tap_frequency_correlation(delays_s: np.ndarray, powers: np.ndarray, delta_k,
                              subcarrier_spacing_hz: float) -> np.ndarray:
    dk = np.asarray(delta_k, dtype=np.float64)
    ph = np.exp(-2j * np.pi * np.multiply.outer(dk * subcarrier_spacing_hz, delays_s))
    return ph @ powers


@lru_cache(maxsize=64)
def uniform_width_fit(profile: TdlProfile | str, delay_spread_s: float,
                      subcarrier_spacing_hz: float) -> float:
    """Width of the uniform PDP whose |sinc| correlation best matches the tap profile."""
    prof = tdl_profile(profile) if isinstance(profile, str) else profile
    delays = np.asarray(prof.normalized_delays) * delay_spread_s
    target = np.abs(tap_frequency_correlation(delays, prof.linear_powers,
                                              np.arange(WIDTH_FIT_MAX_LAG + 1),
                                              subcarrier_spacing_hz))
    lags = np.arange(WIDTH_FIT_MAX_LAG + 1) * subcarrier_spacing_hz

    def cost(tw):
        return float(np.sum((np.abs(sinc(np.pi * tw * lags)) - target) ** 2))

    span = 1.0 / subcarrier_spacing_hz
    grid = np.linspace(0.0, span, 2001)
    i = int(np.argmin([cost(t) for t in grid]))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13})
    return float(res.x)


def generate_channel(num: Numerology, profile: TdlProfile,
                     fading: FadingConfig) -> ChannelRealization:
    if fading.doppler_hz * num.symbol_duration_s >= 0.5:
        raise ValueError("doppler x symbol duration must stay below 0.5")
    rng = np.random.default_rng(fading.seed)
    powers = profile.linear_powers
    delays = np.asarray(profile.normalized_delays) * fading.delay_spread_s
    taps = np.stack([
        jakes_process(num.wideband_symbols, fading.doppler_hz, num.symbol_duration_s,
                      fading.n_sinusoids, rng)
        for _ in range(len(powers))
    ])
    taps *= np.sqrt(powers)[:, None]
    k = np.arange(num.wideband_subcarriers)
    steer = np.exp(-2j * np.pi * np.outer(k * num.subcarrier_spacing_hz, delays))
    h = steer @ taps
    h /= np.sqrt(np.mean(np.abs(h) ** 2))
    params = ChannelParams(
        mean_delay_s=float(np.dot(powers, delays)),
        delay_width_s=uniform_width_fit(profile, fading.delay_spread_s,
                                        num.subcarrier_spacing_hz),
        doppler_hz=fading.doppler_hz,
        snr_linear=np.inf,
    )
    return ChannelRealization(ResourceGrid(h), params)


def simulate_observation(chan: ChannelRealization, num: Numerology, dmrs: PilotPattern,
                         trs: PilotPattern, snr_db: float, seed: int) -> Observation:
    """y = h x + w over the wideband burst; snr_db = inf disables noise."""
    rng = np.random.default_rng([int(seed), 0x0B5])
    h = chan.wideband.values
    x = qpsk(rng, h.shape)
    f0, t0 = num.data_band_offset, num.data_symbol_offset
    tx_dmrs = pilot_symbols(dmrs)
    tx_trs = pilot_symbols(trs)
    x[np.ix_(trs.freq_indices, trs.time_indices)] = tx_trs
    x[np.ix_(np.add(dmrs.freq_indices, f0), np.add(dmrs.time_indices, t0))] = tx_dmrs
    noise_var = 0.0 if np.isinf(snr_db) else float(10.0 ** (-snr_db / 10.0))
    w = np.sqrt(noise_var / 2) * (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))
    y = h * x + w
    data = np.s_[f0:f0 + num.data_subcarriers, t0:t0 + num.data_symbols]
    return Observation(
        rx_data_grid=ResourceGrid(y[data]),
        rx_trs=trs.take(y),
        tx_dmrs=tx_dmrs,
        tx_trs=tx_trs,
        snr_db=float(snr_db),
        noise_var=noise_var,
        truth=ResourceGrid(h[data]),
    )
