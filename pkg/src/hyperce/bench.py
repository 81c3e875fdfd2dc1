"""Benchmark sweeps over estimators and scenario cells, with CSV/SVG reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from html import escape

import numpy as np

from .dataset import Dataset, DatasetError, ScenarioSweep
from .estimators import nmse
from .model import PRESETS, Model, planes_to_grid
from .training import initial_estimate, needs_params, per_sample_nmse, predict, prepare_inputs

CLASSICAL = ("LS_BILINEAR", "LMMSE")
MODEL_ESTIMATORS = tuple(PRESETS)
DEBUG_ESTIMATORS = ("PERFECT",)
ESTIMATORS = CLASSICAL + MODEL_ESTIMATORS + DEBUG_ESTIMATORS
CSV_HEADER = ["estimator", "profile", "doppler_hz", "snr_db", "mean_nmse_db", "samples"]


@dataclass(frozen=True)
class ReportRow:
    estimator: str
    profile: str
    doppler_hz: float
    snr_db: float
    mean_nmse: float
    samples: int

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("a report row needs at least one sample")
        if not self.mean_nmse >= 0:
            raise ValueError(f"mean NMSE must be non-negative, got {self.mean_nmse}")

    @property
    def mean_nmse_db(self) -> float:
        return 10.0 * math.log10(self.mean_nmse) if self.mean_nmse > 0 else -math.inf


@dataclass
class ReportTable:
    rows: list[ReportRow]

    def lookup(self, estimator: str) -> dict[tuple[str, float, float], ReportRow]:
        return {(r.profile, r.doppler_hz, r.snr_db): r for r in self.rows if r.estimator == estimator}

    def estimators(self) -> list[str]:
        return list(dict.fromkeys(r.estimator for r in self.rows))


def _sample_nmse(ds: Dataset, indices: list[int], estimator: str, models: dict[str, Model],
                 oracle: bool) -> np.ndarray:
    if estimator == "PERFECT":
        return np.array([nmse(ds.truth[i], ds.truth[i]) for i in indices])
    if estimator in CLASSICAL:
        wiener = estimator == "LMMSE"
        return np.array([nmse(initial_estimate(ds, i, wiener, oracle), ds.truth[i].astype(np.complex128))
                         for i in indices])
    model = models.get(estimator)
    if model is None:
        raise DatasetError(f"estimator {estimator} needs a checkpoint")
    inputs = prepare_inputs(ds, indices, model.config.use_wiener_init, needs_params(model), oracle)
    pred = planes_to_grid(predict(model, inputs))
    truth = ds.truth[indices].astype(np.complex128)
    axes = (1, 2)
    return np.sum(np.abs(pred - truth) ** 2, axis=axes) / np.sum(np.abs(truth) ** 2, axis=axes)


def run_benchmark(ds: Dataset, estimators, models: dict[str, Model] | None = None,
                  sweep: ScenarioSweep | None = None, indices=None,
                  oracle_params: bool = False) -> ReportTable:
    """Mean per-sample NMSE for every (estimator, profile, doppler, snr) cell.

    Parameter-driven estimators use the estimated parameters stored with the
    dataset unless oracle_params is set.
    """
    models = models or {}
    for e in estimators:
        if e not in ESTIMATORS:
            raise ValueError(f"unknown estimator {e!r}; expected one of {ESTIMATORS}")
    cells = ds.cells(indices)
    if sweep is not None:
        missing = [c for c in sweep.configs() if c not in cells]
        if missing:
            raise DatasetError(f"dataset lacks {len(missing)} sweep cells, e.g. {missing[0]}")
        keys = sweep.configs()
    else:
        keys = list(cells)
    flat = [i for k in keys for i in cells[k]]
    rows = []
    for e in estimators:
        values = dict(zip(flat, _sample_nmse(ds, flat, e, models, oracle_params)))
        for k in keys:
            v = [values[i] for i in cells[k]]
            rows.append(ReportRow(e, k[0], k[1], k[2], math.fsum(v) / len(v), len(v)))
    return ReportTable(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(table: ReportTable, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in table.rows:
            w.writerow([r.estimator, r.profile, _fmt(r.doppler_hz), _fmt(r.snr_db),
                        _fmt(r.mean_nmse_db), r.samples])


def read_csv(path) -> ReportTable:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected report header {header}")
        rows = []
        for rec in reader:
            db = float(rec[4])
            rows.append(ReportRow(rec[0], rec[1], float(rec[2]), float(rec[3]),
                                  0.0 if db == -math.inf else 10.0 ** (db / 10.0), int(rec[5])))
    return ReportTable(rows)


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def render_svg(table: ReportTable) -> str:
    """One panel per (profile, doppler); NMSE in dB against SNR, one polyline per estimator."""
    if not table.rows:
        raise ValueError("cannot render an empty report")
    panels = list(dict.fromkeys((r.profile, r.doppler_hz) for r in table.rows))
    ests = table.estimators()
    finite = [r.mean_nmse_db for r in table.rows if math.isfinite(r.mean_nmse_db)]
    lo, hi = (min(finite), max(finite)) if finite else (-1.0, 1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 1, hi + 1
    snrs = [r.snr_db for r in table.rows]
    s_lo, s_hi = min(snrs), max(snrs)
    if s_hi == s_lo:
        s_hi = s_lo + 1
    pw, ph, pad, cols = 300, 220, 40, 3
    n_rows = math.ceil(len(panels) / cols)
    width = cols * (pw + pad) + pad + 140
    height = n_rows * (ph + 2 * pad) + pad
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">']
    for n, (prof, fd) in enumerate(panels):
        x0 = pad + (n % cols) * (pw + pad)
        y0 = pad + (n // cols) * (ph + 2 * pad)
        out.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
        out.append(f'<text x="{x0 + pw / 2}" y="{y0 - 6}" text-anchor="middle">'
                   f'{escape(prof)}, {fd:g} Hz</text>')
        out.append(f'<text x="{x0}" y="{y0 + ph + 14}">{s_lo:g} dB</text>')
        out.append(f'<text x="{x0 + pw}" y="{y0 + ph + 14}" text-anchor="end">{s_hi:g} dB SNR</text>')
        out.append(f'<text x="{x0 - 4}" y="{y0 + 10}" text-anchor="end">{hi:.0f}</text>')
        out.append(f'<text x="{x0 - 4}" y="{y0 + ph}" text-anchor="end">{lo:.0f}</text>')
        for e_i, e in enumerate(ests):
            pts = sorted((r.snr_db, r.mean_nmse_db) for r in table.rows
                         if r.estimator == e and (r.profile, r.doppler_hz) == (prof, fd)
                         and math.isfinite(r.mean_nmse_db))
            if not pts:
                continue
            xy = " ".join(f"{x0 + (s - s_lo) / (s_hi - s_lo) * pw:.1f},"
                          f"{y0 + (hi - v) / (hi - lo) * ph:.1f}" for s, v in pts)
            out.append(f'<polyline fill="none" stroke="{_COLORS[e_i % len(_COLORS)]}" '
                       f'stroke-width="1.5" points="{xy}"/>')
    lx = cols * (pw + pad) + pad
    for e_i, e in enumerate(ests):
        y = pad + 16 * e_i
        out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 20}" y2="{y}" '
                   f'stroke="{_COLORS[e_i % len(_COLORS)]}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{y + 4}">{escape(e)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(table: ReportTable, fmt: str, path):
    if not table.rows:
        raise ValueError("cannot emit an empty report")
    fmt = fmt.upper()
    if fmt == "CSV":
        write_csv(table, path)
    elif fmt == "SVG":
        with open(path, "w") as f:
            f.write(render_svg(table))
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def mean_over(table: ReportTable, estimator: str, min_snr_db: float = -math.inf) -> float:
    """Average of the cell means (linear NMSE) at SNR >= min_snr_db."""
    v = [r.mean_nmse for r in table.rows if r.estimator == estimator and r.snr_db >= min_snr_db]
    if not v:
        raise ValueError(f"no rows for {estimator} at SNR >= {min_snr_db}")
    return math.fsum(v) / len(v)
