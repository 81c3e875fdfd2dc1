"""LS pilot estimates, bilinear and Wiener interpolation, NMSE."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import Observation
from .correlation import ChannelParams, build_wiener_matrices
from .numerology import Numerology, PilotPattern, ResourceGrid

NOISELESS_RIDGE = 1e-12


class InitMethod(str, Enum):
    BILINEAR = "BILINEAR"
    WIENER = "WIENER"
    MODEL = "MODEL"


@dataclass
class PilotLsEstimates:
    values: np.ndarray
    pattern: PilotPattern

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.pattern.shape:
            raise ValueError(f"LS shape {self.values.shape} does not match pattern {self.pattern.shape}")


@dataclass
class FullGridEstimate:
    values: ResourceGrid
    method: InitMethod


def ls_estimate(obs: Observation, pattern: PilotPattern) -> PilotLsEstimates:
    tx = np.asarray(obs.tx_dmrs)
    if np.any(tx == 0):
        raise ValueError("zero pilot symbol in the DMRS sequence")
    y = pattern.take(obs.rx_data_grid.values)
    return PilotLsEstimates(y / tx, pattern)


def _interp_matrix(anchors, n_out: int) -> np.ndarray:
    # rows: output positions, cols: anchors; np.interp clamps outside the hull
    anchors = np.asarray(anchors, dtype=np.float64)
    eye = np.eye(len(anchors))
    grid = np.arange(n_out, dtype=np.float64)
    return np.stack([np.interp(grid, anchors, eye[j]) for j in range(len(anchors))], axis=1)


def bilinear_init(pilots: PilotLsEstimates, num: Numerology) -> FullGridEstimate:
    pat = pilots.pattern
    if len(pat.freq_indices) < 2 or len(pat.time_indices) < 2:
        raise ValueError("bilinear interpolation needs at least 2 pilot rows and columns")
    wf = _interp_matrix(pat.freq_indices, num.data_subcarriers)
    wt = _interp_matrix(pat.time_indices, num.data_symbols)
    full = wf @ pilots.values @ wt.T
    return FullGridEstimate(ResourceGrid(full), InitMethod.BILINEAR)


def data_positions(num: Numerology) -> np.ndarray:
    k, n = np.meshgrid(np.arange(num.data_subcarriers), np.arange(num.data_symbols), indexing="ij")
    return np.stack([k.ravel(), n.ravel()], axis=1)


def wiener_filter(pilots: PilotLsEstimates, params: ChannelParams, num: Numerology,
                  targets: np.ndarray | None = None) -> np.ndarray:
    """Cross (Auto + I/snr)^-1 vec(pilots) via a Cholesky solve; returns the flat target vector."""
    if targets is None:
        targets = data_positions(num)
    cross, auto = build_wiener_matrices(targets, pilots.pattern.positions(), params, num)
    loading = NOISELESS_RIDGE if np.isinf(params.snr_linear) else 1.0 / params.snr_linear
    a = auto + loading * np.eye(len(auto))
    try:
        factor = cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("pilot correlation matrix is not positive definite") from exc
    return cross @ cho_solve(factor, pilots.values.ravel())


def wiener_estimate(pilots: PilotLsEstimates, params: ChannelParams,
                    num: Numerology) -> FullGridEstimate:
    vec = wiener_filter(pilots, params, num)
    return FullGridEstimate(ResourceGrid(vec.reshape(num.data_shape)), InitMethod.WIENER)


def nmse(estimate, truth) -> float:
    est = estimate.values if isinstance(estimate, ResourceGrid) else np.asarray(estimate)
    ref = truth.values if isinstance(truth, ResourceGrid) else np.asarray(truth)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    denom = float(np.sum(np.abs(ref) ** 2))
    if denom == 0:
        raise ValueError("truth grid is identically zero")
    return float(np.sum(np.abs(est - ref) ** 2) / denom)
