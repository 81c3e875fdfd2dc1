"""Separable time-frequency correlation models: uniform PDP in frequency, Jakes in time."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numerology import Numerology

_SERIES_TERMS = 40
_ASYMPTOTIC_TERMS = 16
_SWITCH = 8.0


@dataclass(frozen=True)
class ChannelParams:
    mean_delay_s: float
    delay_width_s: float
    doppler_hz: float
    snr_linear: float

    def __post_init__(self):
        if self.delay_width_s < 0:
            raise ValueError("delay width must be non-negative")
        if self.doppler_hz < 0:
            raise ValueError("doppler must be non-negative")
        if not self.snr_linear > 0:
            raise ValueError("snr must be positive")

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(self.snr_linear)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelParams":
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})


def _j0_series(x):
    # sum_k (-1)^k (x^2/4)^k / (k!)^2, evaluated by nested multiplication
    q = -(x * x) / 4.0
    acc = np.ones_like(x)
    for k in range(_SERIES_TERMS, 0, -1):
        acc = 1.0 + acc * q / (k * k)
    return acc


def _j0_asymptotic(x):
    # Hankel expansion, a_k = (-1)^k prod_{j<=k} (2j-1)^2 / (k! 8^k);
    # P = sum (-1)^m a_2m x^-2m, Q = sum (-1)^m a_2m+1 x^-(2m+1)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    a = 1.0
    xp = np.ones_like(x)
    for k in range(_ASYMPTOTIC_TERMS):
        if k > 0:
            a *= (2 * k - 1) ** 2 / (8.0 * k)
            xp = xp * x
        term = a / xp
        sign = (-1.0) ** (k // 2) * (-1.0) ** k
        if k % 2 == 0:
            p = p + sign * term
        else:
            q = q + sign * term
    phase = x - np.pi / 4
    return np.sqrt(2.0 / (np.pi * x)) * (p * np.cos(phase) - q * np.sin(phase))


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind, accurate to ~1e-8."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.empty_like(x)
    small = x < _SWITCH
    out[small] = _j0_series(x[small])
    out[~small] = _j0_asymptotic(x[~small])
    return out if out.ndim else float(out)


def sinc(x):
    """Unnormalized sinc, sin(x)/x."""
    x = np.asarray(x, dtype=np.float64)
    # np.sinc is sin(pi t)/(pi t)
    out = np.sinc(x / np.pi)
    return out if out.ndim else float(out)


def freq_correlation(delta_k, params: ChannelParams, num: Numerology):
    arg = np.asarray(delta_k, dtype=np.float64) * num.subcarrier_spacing_hz
    out = np.exp(-2j * np.pi * params.mean_delay_s * arg) * sinc(np.pi * params.delay_width_s * arg)
    return out if np.ndim(out) else complex(out)


def time_correlation(delta_n, params: ChannelParams, num: Numerology):
    arg = 2 * np.pi * params.doppler_hz * num.symbol_duration_s * np.asarray(delta_n, dtype=np.float64)
    return bessel_j0(arg)


def re_correlation(delta_k, delta_n, params: ChannelParams, num: Numerology):
    """Correlation E[h(k+dk, n+dn) h*(k, n)] under the separable model."""
    out = freq_correlation(delta_k, params, num) * time_correlation(delta_n, params, num)
    return out if np.ndim(out) else complex(out)


def correlation_between(a: np.ndarray, b: np.ndarray, params: ChannelParams,
                        num: Numerology) -> np.ndarray:
    """Matrix of re_correlation between RE lists a (rows) and b (columns), each (N, 2) of (k, n)."""
    a = np.asarray(a).reshape(-1, 2)
    b = np.asarray(b).reshape(-1, 2)
    dk = a[:, 0][:, None] - b[:, 0][None, :]
    dn = a[:, 1][:, None] - b[:, 1][None, :]
    # lag tables keep the special-function work proportional to the lag span
    k_lags, k_inv = np.unique(dk, return_inverse=True)
    n_lags, n_inv = np.unique(dn, return_inverse=True)
    rf = np.atleast_1d(freq_correlation(k_lags, params, num))
    rt = np.atleast_1d(time_correlation(n_lags, params, num))
    return (rf[k_inv] * rt[n_inv]).reshape(dk.shape)


def build_wiener_matrices(target_positions, pilot_positions, params: ChannelParams,
                          num: Numerology) -> tuple[np.ndarray, np.ndarray]:
    """Cross-correlation (targets x pilots) and pilot auto-correlation matrices."""
    pilots = np.asarray(pilot_positions).reshape(-1, 2)
    if len(pilots) == 0:
        raise ValueError("at least one pilot position is required")
    cross = correlation_between(target_positions, pilots, params, num)
    auto = correlation_between(pilots, pilots, params, num)
    return cross, auto
