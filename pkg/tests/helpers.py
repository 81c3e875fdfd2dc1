"""Shared oracles and generators for the test suite."""

import numpy as np
from scipy.special import j0 as scipy_j0

from hyperce.correlation import ChannelParams, correlation_between
from hyperce.numerology import Numerology, PilotKind, PilotPattern, default_numerology, trs_pattern
from hyperce.params import TrsLsField


def model_exact_field(rng, params: ChannelParams, snr_db: float, num: Numerology | None = None,
                      pattern: PilotPattern | None = None) -> TrsLsField:
    """TRS LS field drawn from the separable covariance, scaled to unit realized power, plus AWGN."""
    num = num or default_numerology()
    pattern = pattern or trs_pattern(num)
    pos = pattern.positions()
    cov = correlation_between(pos, pos, params, num)
    w, v = np.linalg.eigh(cov)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    n = len(pos)
    h = root @ ((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2))
    h /= np.sqrt(np.mean(np.abs(h) ** 2))
    if np.isfinite(snr_db):
        s2 = 10.0 ** (-snr_db / 10.0)
        h = h + np.sqrt(s2 / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return TrsLsField(h.reshape(pattern.shape), pattern)


def small_numerology(n_f: int = 8, n_t: int = 4) -> Numerology:
    return Numerology(15e3, 1e-3 / 14, n_f, n_t, n_f, n_t, 0, 0)


def small_pilots(num: Numerology, freq=(1, 5), time=(0, 3)) -> PilotPattern:
    return PilotPattern(tuple(freq), tuple(time), PilotKind.DMRS, num.data_shape)


def dense_wiener(ls: np.ndarray, pilots: PilotPattern, params: ChannelParams, num: Numerology) -> np.ndarray:
    """Textbook LMMSE with explicit loops and an explicit inverse; independent of the package kernels."""
    df, ts = num.subcarrier_spacing_hz, num.symbol_duration_s

    def r(dk, dn):
        x = np.pi * params.delay_width_s * dk * df
        s = 1.0 if x == 0 else np.sin(x) / x
        return np.exp(-2j * np.pi * params.mean_delay_s * dk * df) * s * scipy_j0(2 * np.pi * params.doppler_hz * ts * dn)

    pp = [(k, n) for k in pilots.freq_indices for n in pilots.time_indices]
    tt = [(k, n) for k in range(num.data_subcarriers) for n in range(num.data_symbols)]
    auto = np.array([[r(a[0] - b[0], a[1] - b[1]) for b in pp] for a in pp])
    cross = np.array([[r(a[0] - b[0], a[1] - b[1]) for b in pp] for a in tt])
    inv = np.linalg.inv(auto + np.eye(len(pp)) / params.snr_linear)
    return (cross @ inv @ ls.ravel()).reshape(num.data_shape)


def nested_loop_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    """3x3 cross-correlation, zero padding 1, written as plain loops."""
    bsz, cin, h, wd = x.shape
    cout = w.shape[0]
    out = np.zeros((bsz, cout, h, wd))
    for n in range(bsz):
        for o in range(cout):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0 if b is None else b[o]
                    for c in range(cin):
                        for di in range(3):
                            for dj in range(3):
                                ii, jj = i + di - 1, j + dj - 1
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += x[n, c, ii, jj] * w[o, c, di, dj]
                    out[n, o, i, j] = acc
    return out


def j0_series(x: float, terms: int = 60) -> float:
    total, term = 1.0, 1.0
    for k in range(1, terms):
        term *= -(x * x) / 4.0 / (k * k)
        total += term
    return total
