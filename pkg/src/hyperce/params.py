"""Channel-parameter estimation from a wideband TRS burst.

Two stages. Correlation matching gives closed-form starting values: phase slope
and |sinc| fit of the frequency correlation, lag-one noise split, and a J0 fit of
the symbol-lag correlation. These seed a Gaussian maximum-likelihood refinement
over the separable covariance S (R_t kron R_f) + noise I, evaluated in the
eigenbasis of the two factors so each likelihood costs one small matmul.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import Observation, pilot_symbols
from .correlation import ChannelParams, bessel_j0, sinc
from .numerology import Numerology, PilotPattern, default_numerology, trs_pattern

log = logging.getLogger(__name__)

SNR_FLOOR = 10.0 ** -0.5
SNR_CEILING = 1e4
N_FREQ_LAGS = 16
WIDTH_GRID = 301
DOPPLER_GRID = 351
NEWTON_STEPS = 12


@dataclass
class TrsLsField:
    values: np.ndarray
    pattern: PilotPattern

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.pattern.shape:
            raise ValueError(f"TRS field shape {self.values.shape} does not match {self.pattern.shape}")


@dataclass
class Diagnostics:
    signal_power: float
    noise_power: float
    fit_residual: float
    phase_ambiguous: bool = False


@dataclass
class EstimatedParams:
    params: ChannelParams
    diagnostics: Diagnostics


def trs_ls(obs: Observation, pattern: PilotPattern | None = None) -> TrsLsField:
    if obs.rx_trs is None:
        raise ValueError("observation carries no TRS")
    if pattern is None:
        pattern = trs_pattern(default_numerology())
    tx = obs.tx_trs if obs.tx_trs is not None else pilot_symbols(pattern)
    return TrsLsField(np.asarray(obs.rx_trs) / tx, pattern)


# -- geometry helpers --------------------------------------------------------

def _freq_stride(field: TrsLsField) -> int:
    f = np.asarray(field.pattern.freq_indices)
    steps = np.unique(np.diff(f))
    if len(steps) != 1:
        raise ValueError("TRS subcarriers must be uniformly spaced")
    return int(steps[0])


def width_search_max(num: Numerology, stride: int) -> float:
    return 1.0 / (4 * num.subcarrier_spacing_hz * stride)


def doppler_search_max(num: Numerology, first_lag: int) -> float:
    return 1.0 / (2 * num.symbol_duration_s * first_lag)


def _symbol_pairs(time_indices) -> dict[int, list[tuple[int, int]]]:
    pairs: dict[int, list[tuple[int, int]]] = {}
    t = list(time_indices)
    for a in range(len(t)):
        for b in range(a + 1, len(t)):
            pairs.setdefault(t[b] - t[a], []).append((a, b))
    return dict(sorted(pairs.items()))


def frequency_lag_correlation(values: np.ndarray, n_lags: int = N_FREQ_LAGS) -> np.ndarray:
    """R(m) = mean over symbols and start subcarriers of h(k+m) h*(k), m = 0..n_lags."""
    out = np.empty(n_lags + 1, dtype=np.complex128)
    out[0] = np.mean(np.abs(values) ** 2)
    for m in range(1, n_lags + 1):
        out[m] = np.mean(values[m:] * np.conj(values[:-m]))
    return out


def time_lag_correlation(values: np.ndarray, time_indices) -> dict[int, float]:
    res = {}
    for lag, pairs in _symbol_pairs(time_indices).items():
        res[lag] = float(np.mean([np.mean(values[:, b] * np.conj(values[:, a])).real
                                  for a, b in pairs]))
    return res


def _grid_then_bounded(cost, lo: float, hi: float, n_grid: int = 128) -> float:
    # grid seeding guards the golden/Brent refinement against the sinc and J0 side lobes
    grid = np.linspace(lo, hi, n_grid)
    vals = np.asarray(cost(grid))
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    res = minimize_scalar(cost, bounds=(a, b), method="bounded",
                          options={"xatol": (hi - lo) * 1e-7})
    return float(res.x) if res.fun <= vals[i] else float(grid[i])


# -- correlation-matching stage ---------------------------------------------

@dataclass
class MomentFit:
    mean_delay_s: float
    delay_width_s: float
    noise_power: float
    doppler_hz: float
    p0: float
    fit_residual: float
    phase_ambiguous: bool


def _moment_delay(values: np.ndarray, num: Numerology, stride: int):
    r = frequency_lag_correlation(values)
    p0 = float(r[0].real)
    lags = np.arange(1, N_FREQ_LAGS + 1)
    raw = lags * stride * num.subcarrier_spacing_hz
    mag = np.abs(r[1:]) / p0

    def cost(tw):
        model = np.abs(sinc(np.pi * np.multiply.outer(tw, raw)))
        return np.sum((mag - model) ** 2, axis=-1)

    tw = _grid_then_bounded(cost, 0.0, width_search_max(num, stride))
    residual = float(cost(tw))
    # undo the sign flips of negative sinc lobes before unwrapping
    phase = np.angle(r[1:] * np.sign(sinc(np.pi * tw * raw) + 1e-300))
    unwrapped = np.unwrap(np.concatenate([[0.0], phase]))[1:]
    steps = np.diff(np.concatenate([[0.0], unwrapped]))
    ambiguous = bool(np.any(np.abs(steps) > np.pi / 2))
    if ambiguous:
        log.debug("TRS phase unwrap ambiguous: a lag step exceeds pi/2")
    w = np.abs(r[1:])
    x = -2 * np.pi * raw
    tmu = float(np.sum(w * x * unwrapped) / np.sum(w * x * x)) if np.any(w > 0) else 0.0
    return tmu, tw, r, p0, residual, ambiguous


def _moment_noise(r: np.ndarray, p0: float, tw: float, num: Numerology, stride: int) -> float:
    rf1 = abs(sinc(np.pi * tw * stride * num.subcarrier_spacing_hz))
    eps = 1e-6 * p0
    return max(eps, p0 - abs(r[1]) / max(rf1, 1e-12))


def _snr_from_noise(p0: float, noise: float) -> float:
    snr = (p0 - noise) / noise if noise > 0 else SNR_CEILING
    return float(np.clip(snr, SNR_FLOOR, SNR_CEILING))


def _moment_doppler(values: np.ndarray, time_indices, signal_power: float,
                    num: Numerology) -> float:
    corr = time_lag_correlation(values, time_indices)
    lags = np.array(list(corr))
    rt = np.array([corr[l] for l in lags]) / max(signal_power, 1e-300)
    ts = num.symbol_duration_s

    def cost(fd):
        model = bessel_j0(2 * np.pi * ts * np.multiply.outer(fd, lags))
        return np.sum((rt - model) ** 2, axis=-1)

    return _grid_then_bounded(cost, 0.0, doppler_search_max(num, int(lags.min())), n_grid=256)


def moment_fit(field: TrsLsField, num: Numerology) -> MomentFit:
    values = field.values
    if not np.any(values):
        raise ValueError("TRS field is identically zero")
    stride = _freq_stride(field)
    tmu, tw, r, p0, residual, amb = _moment_delay(values, num, stride)
    noise = _moment_noise(r, p0, tw, num, stride)
    fd = _moment_doppler(values, field.pattern.time_indices, p0 - noise, num)
    return MomentFit(tmu, tw, noise, fd, p0, residual, amb)


# -- maximum-likelihood stage -----------------------------------------------

class TrsLikelihood:
    """Gaussian likelihood of a TRS field under the separable uniform-PDP/Jakes model.

    Eigendecompositions of the frequency factor (per delay width) and the time
    factor (per Doppler) are tabulated once per TRS geometry.
    """

    def __init__(self, num: Numerology, freq_indices, time_indices):
        self.num = num
        self.fk = np.asarray(freq_indices, dtype=np.float64)
        self.tn = np.asarray(time_indices, dtype=np.float64)
        stride = int(np.diff(freq_indices)[0])
        first_lag = int(np.min(np.diff(time_indices)))
        self.widths = np.linspace(0.0, width_search_max(num, stride), WIDTH_GRID)
        self.dopplers = np.linspace(0.0, doppler_search_max(num, first_lag), DOPPLER_GRID)
        dk = (self.fk[:, None] - self.fk[None, :]) * num.subcarrier_spacing_hz
        dn = self.tn[:, None] - self.tn[None, :]
        lf, uf = np.linalg.eigh(np.stack([sinc(np.pi * w * dk) for w in self.widths]))
        self.lam_f = np.clip(lf, 0.0, None)
        self.uf_t = np.ascontiguousarray(np.swapaxes(uf, 1, 2))
        lt, ut = np.linalg.eigh(np.stack([
            bessel_j0(2 * np.pi * f * num.symbol_duration_s * dn) for f in self.dopplers]))
        self.lam_t = np.clip(lt, 0.0, None)
        self.ut = ut

    def _derotate(self, values, tmu):
        tmu = np.atleast_1d(tmu)
        ph = np.exp(2j * np.pi * np.outer(tmu, self.fk) * self.num.subcarrier_spacing_hz)
        return ph[:, :, None] * values[None]

    @staticmethod
    def _profile(lam: np.ndarray, p: np.ndarray, floor: float):
        """Maximize over (signal power, noise power) per row by Newton in log-space."""
        mean_p = p.mean(axis=1)
        small = lam < 1e-3 * lam.max(axis=1, keepdims=True)
        n_small = small.sum(axis=1)
        noise = np.where(n_small > 0, np.einsum("gi,gi->g", p, small) / np.maximum(n_small, 1),
                         0.1 * mean_p)
        noise = np.maximum(noise, floor)
        sig = np.maximum((mean_p - noise) / np.maximum(lam.mean(axis=1), 1e-12), floor)
        x0, x1 = np.log(sig), np.log(noise)
        lo = np.log(floor)
        hi = np.log(max(float(np.max(mean_p)) * 1e3, floor * 10))
        lam2 = lam * lam
        for _ in range(NEWTON_STEPS):
            s, n = np.exp(x0), np.exp(x1)
            inv = 1.0 / (s[:, None] * lam + n[:, None])
            r = (p * inv - 1.0) * inv  # (p - d) / d^2
            q = (inv - 2.0 * p * inv * inv) * inv  # (d - 2p) / d^3
            gs, gn = np.einsum("gi,gi->g", lam, r), r.sum(1)
            hss, hsn, hnn = np.einsum("gi,gi->g", lam2, q), np.einsum("gi,gi->g", lam, q), q.sum(1)
            g0, g1 = gs * s, gn * n
            h00 = hss * s * s + g0
            h01 = hsn * s * n
            h11 = hnn * n * n + g1
            det = h00 * h11 - h01 ** 2
            ok = (h00 < 0) & (det > 0)
            safe = np.where(ok, det, 1.0)
            st0 = np.where(ok, -(h11 * g0 - h01 * g1) / safe, 0.5 * np.sign(g0))
            st1 = np.where(ok, -(h00 * g1 - h01 * g0) / safe, 0.5 * np.sign(g1))
            x0 = np.clip(x0 + np.clip(st0, -2, 2), lo, hi)
            x1 = np.clip(x1 + np.clip(st1, -2, 2), lo, hi)
        s, n = np.exp(x0), np.exp(x1)
        d = s[:, None] * lam + n[:, None]
        return -(np.log(d) + p / d).sum(axis=1), s, n

    def _loglik(self, z: np.ndarray, lam: np.ndarray, floor: float):
        g = z.shape[0]
        return self._profile(lam.reshape(g, -1), (np.abs(z) ** 2).reshape(g, -1), floor)

    @staticmethod
    def _scan(fun, n: int, coarse: int):
        idx = np.arange(0, n, coarse)
        i = int(idx[np.argmax(fun(idx))])
        idx = np.arange(max(i - coarse, 0), min(i + coarse + 1, n))
        ll = fun(idx)
        j = int(np.argmax(ll))
        off = 0.0
        if 0 < j < len(idx) - 1:
            a, b, c = ll[j - 1], ll[j], ll[j + 1]
            den = a - 2 * b + c
            if den < 0:
                off = float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))
        return int(idx[j]), off

    def fit(self, values: np.ndarray, mean_delay_s: float, doppler_hz: float):
        """Coordinate/2-D grid ascent from moment starting values.

        Returns (mean_delay, width, doppler, signal_power, noise_power).
        """
        values = np.asarray(values, dtype=np.complex128)
        floor = 1e-6 * float(np.mean(np.abs(values) ** 2))
        tmu = float(mean_delay_s)
        jt = int(np.argmin(np.abs(self.dopplers - doppler_hz)))

        def f_width(idx, tmu, jt):
            w = self._derotate(values, tmu)[0] @ self.ut[jt]
            z = self.uf_t[idx] @ w
            lam = self.lam_f[idx][:, :, None] * self.lam_t[jt][None, None, :]
            return self._loglik(z, lam, floor)[0]

        def f_doppler(idx, tmu, i):
            v = self.uf_t[i] @ self._derotate(values, tmu)[0]
            z = v @ self.ut[idx]
            lam = self.lam_f[i][None, :, None] * self.lam_t[idx][:, None, :]
            return self._loglik(z, lam, floor)[0]

        def f_joint(tms, iis, jt):
            w = self._derotate(values, tms) @ self.ut[jt]
            z = self.uf_t[iis][None] @ w[:, None]
            lam = self.lam_f[iis][:, :, None] * self.lam_t[jt][None, None, :]
            lam = np.broadcast_to(lam[None], (len(tms),) + lam.shape)
            z = z.reshape((-1,) + z.shape[2:])
            return self._loglik(z, lam.reshape((-1,) + lam.shape[2:]), floor)[0].reshape(len(tms), len(iis))

        nw, nd = len(self.widths), len(self.dopplers)
        i, _ = self._scan(lambda idx: f_width(idx, tmu, jt), nw, 10)
        jt, _ = self._scan(lambda idx: f_doppler(idx, tmu, i), nd, 10)
        span0 = max(0.08e-6, 0.1 * abs(tmu))
        for span, nt, di in ((span0, 17, 2), (span0 / 4, 9, 1)):
            tms = tmu + np.linspace(-span, span, nt)
            iis = np.clip(i + di * np.arange(-4, 5) if di == 2 else i + np.arange(-2, 3), 0, nw - 1)
            iis = np.unique(iis)
            ll = f_joint(tms, iis, jt)
            a, b = np.unravel_index(int(np.argmax(ll)), ll.shape)
            tmu, i = float(tms[a]), int(iis[b])
            jt, off_d = self._scan(lambda idx: f_doppler(idx, tmu, i), nd, 10)
        i, off_w = self._scan(lambda idx: f_width(idx, tmu, jt), nw, 10)
        z = self.uf_t[i] @ self._derotate(values, tmu)[0] @ self.ut[jt]
        lam = self.lam_f[i][:, None] * self.lam_t[jt][None, :]
        _, s, n = self._loglik(z[None], lam[None], floor)
        width = max(0.0, float(self.widths[i] + off_w * (self.widths[1] - self.widths[0])))
        doppler = max(0.0, float(self.dopplers[jt] + off_d * (self.dopplers[1] - self.dopplers[0])))
        return tmu, width, doppler, float(s[0]), float(n[0])


@lru_cache(maxsize=8)
def _likelihood_for(num: Numerology, freq_indices: tuple, time_indices: tuple) -> TrsLikelihood:
    return TrsLikelihood(num, freq_indices, time_indices)


def likelihood_for(num: Numerology, pattern: PilotPattern) -> TrsLikelihood:
    return _likelihood_for(num, tuple(pattern.freq_indices), tuple(pattern.time_indices))


def _ml_fit(field: TrsLsField, num: Numerology, init: MomentFit):
    lk = likelihood_for(num, field.pattern)
    return lk.fit(field.values, init.mean_delay_s, init.doppler_hz)


# -- public component estimators -------------------------------------------

def estimate_delay_params(field: TrsLsField, num: Numerology, refine: bool = True) -> tuple[float, float]:
    """(mean delay, delay width) in seconds."""
    if field.values.shape[0] <= 8:
        raise ValueError("delay estimation needs more than 8 TRS subcarriers")
    init = moment_fit(field, num)
    if not refine:
        return init.mean_delay_s, init.delay_width_s
    tmu, tw, *_ = _ml_fit(field, num, init)
    return tmu, tw


def estimate_snr(field: TrsLsField, num: Numerology, refine: bool = True) -> tuple[float, float]:
    """(linear SNR, noise power); SNR is clamped to [-5, 40] dB."""
    if field.values.shape[1] < 2:
        raise ValueError("SNR estimation needs at least 2 TRS symbols")
    init = moment_fit(field, num)
    noise = init.noise_power
    if refine:
        noise = max(_ml_fit(field, num, init)[4], 1e-6 * init.p0)
    return _snr_from_noise(init.p0, noise), noise


def estimate_doppler(field: TrsLsField, num: Numerology, refine: bool = True) -> float:
    if field.values.shape[1] < 2:
        raise ValueError("Doppler estimation needs at least 2 TRS symbols")
    init = moment_fit(field, num)
    if not refine:
        return init.doppler_hz
    return _ml_fit(field, num, init)[2]


def estimate_params(obs_or_field, num: Numerology, refine: bool = True) -> EstimatedParams:
    if isinstance(obs_or_field, TrsLsField):
        field = obs_or_field
    else:
        field = trs_ls(obs_or_field, trs_pattern(num))
    init = moment_fit(field, num)
    tmu, tw, fd, noise = init.mean_delay_s, init.delay_width_s, init.doppler_hz, init.noise_power
    if refine:
        tmu, tw, fd, _, noise = _ml_fit(field, num, init)
        noise = max(noise, 1e-6 * init.p0)
    snr = _snr_from_noise(init.p0, noise)
    params = ChannelParams(mean_delay_s=float(tmu), delay_width_s=max(float(tw), 0.0),
                           doppler_hz=max(float(fd), 0.0), snr_linear=snr)
    diag = Diagnostics(signal_power=float(init.p0 - noise), noise_power=float(noise),
                       fit_residual=float(init.fit_residual), phase_ambiguous=init.phase_ambiguous)
    return EstimatedParams(params, diag)
