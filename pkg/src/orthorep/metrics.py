"""Regression metrics and report tables for drag-coefficient evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# Drag-coefficient bins used by the error breakdown table. The first bin is
# closed on both ends; the rest are half-open (lo, hi].
DRAG_BINS = (
    (0.18, 0.3),
    (0.3, 0.4),
    (0.4, 0.5),
    (0.5, 0.6),
    (0.6, 0.7),
    (0.7, 0.8),
    (0.8, 0.91),
)

# Full-scale reference values used by the integration harness to judge
# whether a large training run is in a sane neighborhood. Desk-scale runs
# are not expected to reach them.
REFERENCE_MSE = 8.2e-4
REFERENCE_R_SQUARED = 0.84
REFERENCE_BIN_MAE = (0.032, 0.021, 0.023, 0.029, 0.021, 0.092, 0.218)
REFERENCE_DRAG_RANGE = (0.175, 0.907)


class MetricsError(ValueError):
    pass


def _check_pair(preds, labels):
    preds = np.asarray(preds, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if len(preds) != len(labels):
        raise MetricsError(f"length mismatch: {len(preds)} predictions vs "
                           f"{len(labels)} labels")
    if len(preds) == 0:
        raise MetricsError("empty inputs")
    return preds, labels


def mse(preds, labels) -> float:
    preds, labels = _check_pair(preds, labels)
    return float(np.mean((preds - labels) ** 2))


def r_squared(preds, labels) -> float:
    """Coefficient of determination: 1 - SS_res / SS_tot about the label mean."""
    preds, labels = _check_pair(preds, labels)
    ss_tot = float(np.sum((labels - labels.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricsError("labels have zero variance; R^2 undefined")
    ss_res = float(np.sum((preds - labels) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class BinRow:
    lo: float | None      # None marks the overflow row
    hi: float | None
    mae: float
    count: int

    @property
    def label(self) -> str:
        if self.lo is None:
            return "outside"
        bracket = "[" if self.lo == DRAG_BINS[0][0] else "("
        return f"{bracket}{self.lo:.2f}, {self.hi:.2f}]"


def binned_error(preds, labels, bins=DRAG_BINS) -> tuple:
    """Mean absolute error and count per label bin, plus an overflow row.

    Labels below the first bin's lower edge or above the last bin's upper
    edge fall into the overflow row, so counts always partition the input.
    Empty input yields all-zero counts.
    """
    preds = np.asarray(preds, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if len(preds) != len(labels):
        raise MetricsError(f"length mismatch: {len(preds)} predictions vs "
                           f"{len(labels)} labels")
    abserr = np.abs(preds - labels)
    rows = []
    claimed = np.zeros(len(labels), dtype=bool)
    for i, (lo, hi) in enumerate(bins):
        if i == 0:
            mask = (labels >= lo) & (labels <= hi)
        else:
            mask = (labels > lo) & (labels <= hi)
        mask &= ~claimed
        claimed |= mask
        n = int(mask.sum())
        rows.append(BinRow(lo, hi, float(abserr[mask].mean()) if n else 0.0, n))
    rest = ~claimed
    n = int(rest.sum())
    rows.append(BinRow(None, None, float(abserr[rest].mean()) if n else 0.0, n))
    return tuple(rows)


@dataclass(frozen=True)
class EvalReport:
    r_squared: float
    mse: float
    binned_errors: tuple
    n: int

    def __post_init__(self):
        if self.r_squared > 1.0 + 1e-12:
            raise MetricsError(f"R^2 {self.r_squared} exceeds 1")
        if self.mse < 0.0:
            raise MetricsError(f"negative MSE {self.mse}")
        total = sum(row.count for row in self.binned_errors)
        if total != self.n:
            raise MetricsError(f"bin counts sum to {total}, expected {self.n}")


def evaluate(preds, labels) -> EvalReport:
    preds, labels = _check_pair(preds, labels)
    return EvalReport(r_squared(preds, labels), mse(preds, labels),
                      binned_error(preds, labels), len(preds))


def report_to_json(report: EvalReport) -> str:
    return json.dumps({
        "n": report.n,
        "r_squared": report.r_squared,
        "mse": report.mse,
        "binned_errors": [
            {"bin": row.label, "lo": row.lo, "hi": row.hi,
             "mae": row.mae, "count": row.count}
            for row in report.binned_errors
        ],
    }, indent=2)


def report_to_text(report: EvalReport) -> str:
    """Aligned-text rendering of an evaluation report."""
    lines = [
        f"n          {report.n}",
        f"R^2        {report.r_squared:.4f}",
        f"MSE        {report.mse:.6g}",
        "",
        f"{'drag bin':<16}{'MAE':>10}{'count':>8}",
    ]
    for row in report.binned_errors:
        mae = f"{row.mae:.4f}" if row.count else "-"
        lines.append(f"{row.label:<16}{mae:>10}{row.count:>8}")
    return "\n".join(lines)


def write_scatter_csv(preds, labels, path) -> None:
    """Dump (label, prediction) pairs for external plotting."""
    preds, labels = _check_pair(preds, labels)
    with open(path, "w") as fh:
        fh.write("label,prediction\n")
        for lab, pred in zip(labels, preds):
            fh.write(f"{lab:.9g},{pred:.9g}\n")


def aggregate_reports(reports) -> dict:
    """Mean and standard deviation of R^2 and MSE across runs (multi-seed)."""
    reports = list(reports)
    if not reports:
        raise MetricsError("no reports to aggregate")
    r2 = np.array([r.r_squared for r in reports])
    errs = np.array([r.mse for r in reports])
    return {
        "runs": len(reports),
        "r_squared_mean": float(r2.mean()),
        "r_squared_std": float(r2.std()),
        "mse_mean": float(errs.mean()),
        "mse_std": float(errs.std()),
    }
