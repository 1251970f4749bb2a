"""Depth evaluation protocol: optional scale/shift pre-alignment, then the
eight standard metrics (Abs Rel, Sq Rel, RMSE, RMSE log, SI log, delta<1.25^n).

Conventions fixed here because the usual write-ups leave them open:
  - SI log is the variance form sqrt(mean d^2 - (mean d)^2), d = ln p - ln g,
    with no x100 factor.
  - Predictions are clamped (default [1e-3, inf)) before the log-domain
    metrics; alignment can push values non-positive.
  - Delta thresholds compare strictly (ratio < 1.25^n).

Each report can carry its pixel-level accumulators so a set of frames can be
re-aggregated exactly as if all pixels had been evaluated at once.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, InsufficientSupportError, ParameterError
from .losses import lstsq_align

REPORT_FIELDS = (
    "abs_rel",
    "sq_rel",
    "rmse",
    "rmse_log",
    "si_log",
    "delta1",
    "delta2",
    "delta3",
    "n_valid",
    "aligned",
)


@dataclass(frozen=True)
class PixelPool:
    """Sufficient statistics for exact per-pixel re-aggregation."""

    n: int
    sum_abs_rel: float
    sum_sq_rel: float
    sum_sq_err: float
    sum_log_diff: float
    sum_sq_log_diff: float
    n_delta1: int
    n_delta2: int
    n_delta3: int


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    si_log: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int
    aligned: bool
    pool: PixelPool | None = None

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in REPORT_FIELDS}


def _report_from_pool(pool: PixelPool, aligned: bool) -> MetricsReport:
    n = pool.n
    mean_d = pool.sum_log_diff / n
    var_d = max(pool.sum_sq_log_diff / n - mean_d * mean_d, 0.0)
    return MetricsReport(
        abs_rel=pool.sum_abs_rel / n,
        sq_rel=pool.sum_sq_rel / n,
        rmse=math.sqrt(pool.sum_sq_err / n),
        rmse_log=math.sqrt(pool.sum_sq_log_diff / n),
        si_log=math.sqrt(var_d),
        delta1=pool.n_delta1 / n,
        delta2=pool.n_delta2 / n,
        delta3=pool.n_delta3 / n,
        n_valid=n,
        aligned=aligned,
        pool=pool,
    )


def evaluate(pred, gt, mask=None, align=True, clamp=(1e-3, math.inf)) -> MetricsReport:
    """Evaluate a prediction against ground truth over the valid pixels.

    With ``align`` the prediction is least-squares scale/shift aligned to the
    ground truth first. The clamp is applied to the (aligned) prediction
    before any metric; pass ``(-inf, inf)`` to disable it.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ContractError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape:
            raise ContractError(f"mask shape {mask.shape} does not match {pred.shape}")
    n = int(mask.sum())
    if n < 1 or (align and n < 2):
        raise InsufficientSupportError(f"evaluation needs {2 if align else 1}+ valid pixels, got {n}")
    g = gt[mask]
    if not np.all(np.isfinite(g)) or (g <= 0).any():
        raise DomainError("ground truth must be finite and > 0 on the valid mask")
    lo, hi = clamp
    if not lo <= hi:
        raise ParameterError(f"clamp bounds out of order: {clamp}")
    if align:
        aff = lstsq_align(pred, gt, mask)
        p = aff.scale * pred[mask] + aff.shift
    else:
        p = pred[mask].copy()
    p = np.clip(p, lo, hi)

    err = p - g
    d = np.log(p) - np.log(g)
    ratio = np.maximum(p / g, g / p)
    pool = PixelPool(
        n=n,
        sum_abs_rel=float((np.abs(err) / g).sum()),
        sum_sq_rel=float((err * err / g).sum()),
        sum_sq_err=float((err * err).sum()),
        sum_log_diff=float(d.sum()),
        sum_sq_log_diff=float((d * d).sum()),
        n_delta1=int((ratio < 1.25).sum()),
        n_delta2=int((ratio < 1.25**2).sum()),
        n_delta3=int((ratio < 1.25**3).sum()),
    )
    return _report_from_pool(pool, aligned=bool(align))


def aggregate(reports, weights: str = "uniform") -> MetricsReport:
    """Fold per-frame reports into one.

    ``uniform`` averages each metric over frames; ``per-pixel`` pools the
    accumulators, reproducing a single evaluation over all pixels at once
    (requires reports that still carry their pools).
    """
    reports = list(reports)
    if not reports:
        raise ParameterError("cannot aggregate zero reports")
    aligned = all(r.aligned for r in reports)
    if weights == "uniform":
        n = len(reports)
        fields = {
            name: sum(getattr(r, name) for r in reports) / n
            for name in REPORT_FIELDS
            if name not in ("n_valid", "aligned")
        }
        return MetricsReport(
            n_valid=sum(r.n_valid for r in reports), aligned=aligned, pool=None, **fields
        )
    if weights == "per-pixel":
        if any(r.pool is None for r in reports):
            raise ParameterError("per-pixel aggregation needs reports carrying accumulators")
        pools = [r.pool for r in reports]
        merged = PixelPool(
            n=sum(p.n for p in pools),
            sum_abs_rel=sum(p.sum_abs_rel for p in pools),
            sum_sq_rel=sum(p.sum_sq_rel for p in pools),
            sum_sq_err=sum(p.sum_sq_err for p in pools),
            sum_log_diff=sum(p.sum_log_diff for p in pools),
            sum_sq_log_diff=sum(p.sum_sq_log_diff for p in pools),
            n_delta1=sum(p.n_delta1 for p in pools),
            n_delta2=sum(p.n_delta2 for p in pools),
            n_delta3=sum(p.n_delta3 for p in pools),
        )
        return _report_from_pool(merged, aligned=aligned)
    raise ParameterError(f"unknown aggregation mode {weights!r}")


# ---------------------------------------------------------------------------
# Report files


def write_reports_json(path, frames, aggregate_report) -> None:
    """``frames`` is a sequence of (name, MetricsReport) pairs."""
    payload = {
        "frames": [{"frame": name, **r.to_dict()} for name, r in frames],
        "aggregate": aggregate_report.to_dict(),
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_reports_csv(path, frames, aggregate_report) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("frame",) + REPORT_FIELDS)
        for name, r in frames:
            writer.writerow([name] + [getattr(r, f) for f in REPORT_FIELDS])
        writer.writerow(["aggregate"] + [getattr(aggregate_report, f) for f in REPORT_FIELDS])
