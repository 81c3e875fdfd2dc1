"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, record_decisions

RELATIVE_FLOOR = 1e-3
MAX_TRIES = 5


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    per_input: list[float]
    checked: int
    skipped: int = 0

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def default_step(dtype) -> float:
    return 1e-3 if np.dtype(dtype) == np.float32 else 1e-6


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], dtype=np.float64,
               h: float | None = None, max_coords: int | None = None,
               seed: int = 0, skip_kinks: bool = True,
               directional: bool = False, joint: bool = False) -> GradCheckReport:
    """Compare analytic gradients of the scalar fn(*tensors) with central differences.

    The error per input is normwise, ||g_analytic - g_numeric|| / max(||g_analytic||,
    ||g_numeric||), over the checked coordinates; the report carries the worst input.
    Inputs whose gradient rms is below RELATIVE_FLOOR times the largest input rms
    are measured against that floor instead, since their ratio is pure rounding noise.
    With max_coords set, a seeded random subset of coordinates is probed per input.
    With skip_kinks, a coordinate whose +-h evaluations change any relu mask or pooling
    choice is not differentiable within the step and is skipped (and counted).
    With directional, each probe perturbs a whole input along a seeded random unit
    direction d and compares g.d; max_coords then sets the probe count (default 4).
    With joint as well, one direction spans all inputs at once, which measures the
    whole gradient against 32-bit loss resolution rather than each small group.
    """
    dtype = np.dtype(dtype)
    h = default_step(dtype) if h is None else h
    arrays = [np.array(x, dtype=dtype) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    rng = np.random.default_rng(seed)

    def evaluate() -> tuple[float, bytes]:
        with record_decisions() as marks:
            v = np.asarray(fn(*[Tensor(a) for a in arrays]).data, dtype=np.float64).item()
        return v, b"".join(m.tobytes() for m in marks)

    _, base = evaluate()
    skipped = 0
    n_probe = max_coords or 4

    analytics = [np.zeros(a.shape) if t.grad is None else t.grad.astype(np.float64)
                 for a, t in zip(arrays, tensors)]
    if directional:
        groups = [list(range(len(arrays)))] if joint else [[i] for i in range(len(arrays))]
        pairs = []
        for group in groups:
            got, numeric, tries = [], [], 0
            while len(got) < n_probe and tries < MAX_TRIES * n_probe:
                tries += 1
                ds = [rng.standard_normal(arrays[i].shape) for i in group]
                norm = np.sqrt(sum(np.sum(d * d) for d in ds))
                ds = [d / norm for d in ds]
                origs = [arrays[i].copy() for i in group]
                for i, d, o in zip(group, ds, origs):
                    arrays[i][...] = o + h * d
                fp, sp = evaluate()
                for i, d, o in zip(group, ds, origs):
                    arrays[i][...] = o - h * d
                fm, sm = evaluate()
                for i, o in zip(group, origs):
                    arrays[i][...] = o
                if skip_kinks and (sp != base or sm != base):
                    skipped += 1
                    continue
                got.append(float(sum(np.sum(analytics[i] * d) for i, d in zip(group, ds))))
                numeric.append((fp - fm) / (2 * h))
            pairs.append((np.array(got), np.array(numeric)))
        return _report(pairs, skipped)

    pairs = []
    for a, analytic in zip(arrays, analytics):
        flat = a.reshape(-1)
        order = rng.permutation(flat.size) if max_coords is not None else np.arange(flat.size)
        want = flat.size if max_coords is None else min(max_coords, flat.size)
        coords, numeric = [], []
        for i in order:
            if len(coords) == want:
                break
            orig = flat[i]
            flat[i] = orig + h
            fp, sp = evaluate()
            flat[i] = orig - h
            fm, sm = evaluate()
            flat[i] = orig
            if skip_kinks and (sp != base or sm != base):
                skipped += 1
                continue
            coords.append(i)
            numeric.append((fp - fm) / (2 * h))
        coords, numeric = np.array(coords, dtype=np.int64), np.array(numeric)
        pairs.append((analytic.reshape(-1)[coords], numeric))
    return _report(pairs, skipped)


def _report(pairs, skipped: int) -> GradCheckReport:
    # inputs whose gradient is far below the largest rms gradient are compared on that scale
    rms = [max(np.linalg.norm(g), np.linalg.norm(n)) / np.sqrt(max(g.size, 1)) for g, n in pairs]
    floor = RELATIVE_FLOOR * max(rms, default=0.0)
    rel, worst_abs = [], 0.0
    for g, n in pairs:
        diff = np.linalg.norm(g - n)
        scale = max(np.linalg.norm(g), np.linalg.norm(n), floor * np.sqrt(g.size))
        if g.size == 0:
            rel.append(float("inf"))  # every probe was rejected: nothing was verified
            continue
        rel.append(0.0 if scale == 0 else float(diff / scale))
        worst_abs = max(worst_abs, float(np.max(np.abs(g - n), initial=0.0)))
    return GradCheckReport(max(rel, default=0.0), worst_abs, rel, sum(g.size for g, _ in pairs), skipped)
