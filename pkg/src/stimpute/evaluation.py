"""Scoring and classical baselines.

The model path segments the dataset under the validation visibility mask,
imputes every sample, averages overlapping predictions per cell, and scores
only at the held-out points. Baselines (monthly climatology, per-location
linear interpolation, low-rank matrix factorization) see exactly the same
visibility, so comparisons are like for like.
"""

from __future__ import annotations

import datetime
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataio import GridDataset, NormalizationStats, normalize, replace_preserving
from .errors import MetricError
from .masking import MaskSplit
from .model import ModelConfig, ModelParams, forward
from .rng import Rng
from .segmentation import make_samples, reconstruct

__all__ = [
    "MetricReport",
    "mae",
    "mre",
    "impute_dataset",
    "evaluate_model",
    "baseline_monthly_mean",
    "baseline_linear_interpolation",
    "baseline_matrix_factorization",
    "monthly_mean_impute",
    "linear_interpolation_impute",
    "matrix_factorization_impute",
    "spatial_error_map",
]


@dataclass
class MetricReport:
    """Scores over a set of held-out points, with per-location breakdowns.

    ``mre`` is stored as a ratio; ``mre_percent`` renders it the way result
    tables usually do. ``per_location`` maps location index to (mae, count)
    over that location's evaluation points; locations without any points are
    absent. ``per_landcover`` groups the same way by label when the dataset
    carries land-cover classes.
    """

    mae: float
    mre: float
    n_eval: int
    height: int
    width: int
    per_location: dict = field(default_factory=dict)
    per_landcover: Optional[dict] = None
    landcover: Optional[list] = None

    @property
    def mre_percent(self) -> float:
        return round(100.0 * self.mre, 2)

    def to_json(self) -> str:
        payload = {
            "mae": self.mae,
            "mre": self.mre,
            "mre_percent": self.mre_percent,
            "n_eval": self.n_eval,
            "height": self.height,
            "width": self.width,
            "per_location": {
                str(k): {"mae": v[0], "n": v[1]} for k, v in self.per_location.items()
            },
        }
        if self.per_landcover is not None:
            payload["per_landcover"] = {
                str(k): {"mae": v[0], "n": v[1]} for k, v in self.per_landcover.items()
            }
        return json.dumps(payload, indent=2)


def mae(pred, truth) -> float:
    """Mean absolute error over paired values."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size == 0:
        raise MetricError("mae needs at least one point")
    if pred.shape != truth.shape:
        raise MetricError(f"mae got {pred.size} predictions vs {truth.size} targets")
    return float(np.abs(pred - truth).mean())


def mre(pred, truth) -> float:
    """Sum of absolute errors relative to the summed absolute target."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size == 0:
        raise MetricError("mre needs at least one point")
    if pred.shape != truth.shape:
        raise MetricError(f"mre got {pred.size} predictions vs {truth.size} targets")
    denom = float(np.abs(truth).sum())
    if denom == 0.0:
        raise MetricError("mre undefined: target values sum to zero magnitude")
    return float(np.abs(pred - truth).sum()) / denom


def _report(pred, truth, locations, dataset: GridDataset) -> MetricReport:
    """Assemble a MetricReport from aligned point arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    locations = np.asarray(locations)
    per_location = {}
    for loc in np.unique(locations):
        sel = locations == loc
        per_location[int(loc)] = (mae(pred[sel], truth[sel]), int(sel.sum()))
    per_landcover = None
    labels = None
    if dataset.landcover is not None:
        labels = [int(v) for v in dataset.landcover]
        per_landcover = {}
        point_labels = dataset.landcover[locations]
        for lab in np.unique(point_labels):
            sel = point_labels == lab
            per_landcover[int(lab)] = (mae(pred[sel], truth[sel]), int(sel.sum()))
    return MetricReport(
        mae=mae(pred, truth),
        mre=mre(pred, truth),
        n_eval=int(pred.size),
        height=dataset.height,
        width=dataset.width,
        per_location=per_location,
        per_landcover=per_landcover,
        landcover=labels,
    )


def _points(split: MaskSplit) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(split.eval_points, dtype=np.int64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise MetricError("split has no evaluation points")
    return pts[:, 0], pts[:, 1]


def _validation_view(dataset: GridDataset, m_cond: np.ndarray) -> GridDataset:
    """Restrict visibility to ``m_cond``: hidden targets are zeroed out, so
    nothing downstream can read them before scoring."""
    y = dataset.Y * m_cond
    return replace_preserving(dataset, Y=y, M=m_cond.astype(np.float64).copy())


def impute_dataset(
    dataset: GridDataset,
    params: ModelParams,
    config: ModelConfig,
    stats: Optional[NormalizationStats] = None,
    m_cond: Optional[np.ndarray] = None,
    length: int = 72,
    stride: int = 12,
    tile: int = 12,
    with_counts: bool = False,
) -> np.ndarray:
    """Model estimate for every cell, in the dataset's original units.

    ``m_cond`` is the visibility mask the model conditions on (defaults to
    the dataset's own M). ``stats`` are the training normalization constants;
    when given, the view is standardized before the forward pass and the
    estimate mapped back afterwards. ``with_counts`` additionally returns the
    per-cell count of sample predictions averaged into each estimate.
    """
    if m_cond is None:
        m_cond = dataset.M
    view = _validation_view(dataset, m_cond)
    if stats is not None:
        view, _ = normalize(view, stats)
    samples = make_samples(view, length=length, stride=stride, tile=tile)
    preds = [forward(s, params, config).data for s in samples]
    result = reconstruct(samples, preds)
    estimate = result.estimate
    if stats is not None:
        estimate = stats.denormalize_y(estimate)
    if with_counts:
        return estimate, result.counts
    return estimate


def evaluate_model(
    dataset: GridDataset,
    split: MaskSplit,
    params: ModelParams,
    config: ModelConfig,
    stats: Optional[NormalizationStats] = None,
    length: int = 72,
    stride: int = 12,
    tile: int = 12,
) -> MetricReport:
    """Impute under the split's visibility and score at its held-out points."""
    estimate = impute_dataset(
        dataset, params, config, stats, split.m_cond, length, stride, tile
    )
    locs, times = _points(split)
    return _report(estimate[locs, times], dataset.Y[locs, times], locs, dataset)


def _month_ids(dataset: GridDataset) -> np.ndarray:
    """Calendar month (1..12) per time step, from the dataset epoch.

    Without an epoch the series is cut into 30-day pseudo-months so the
    baseline stays defined, at reduced fidelity.
    """
    days = np.asarray(dataset.times, dtype=np.int64)
    if dataset.epoch is not None:
        start = datetime.date.fromisoformat(dataset.epoch)
        return np.array(
            [(start + datetime.timedelta(days=int(d))).month for d in days],
            dtype=np.int64,
        )
    warnings.warn(
        "dataset has no epoch date; monthly baseline uses 30-day blocks",
        stacklevel=3,
    )
    return (days // 30) % 12 + 1


def monthly_mean_impute(dataset: GridDataset, m_cond: np.ndarray) -> np.ndarray:
    """Per (location, month-of-year) mean of visible values, with fallbacks.

    Empty months fall back to the location's overall visible mean, and fully
    hidden locations to the global visible mean.
    """
    months = _month_ids(dataset)
    y, vis = dataset.Y, m_cond.astype(bool)
    if not vis.any():
        raise MetricError("monthly mean baseline needs at least one visible entry")
    global_mean = float(y[vis].mean())
    estimate = np.empty_like(y)
    for loc in range(dataset.n_locations):
        loc_vis = vis[loc]
        loc_mean = float(y[loc, loc_vis].mean()) if loc_vis.any() else global_mean
        for month in np.unique(months):
            sel = months == month
            sel_vis = sel & loc_vis
            value = float(y[loc, sel_vis].mean()) if sel_vis.any() else loc_mean
            estimate[loc, sel] = value
    return estimate


def baseline_monthly_mean(dataset: GridDataset, split: MaskSplit) -> MetricReport:
    estimate = monthly_mean_impute(dataset, split.m_cond)
    locs, times = _points(split)
    return _report(estimate[locs, times], dataset.Y[locs, times], locs, dataset)


def linear_interpolation_impute(
    dataset: GridDataset, m_cond: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-location linear interpolation in time over visible values.

    Returns (estimate, covered) where ``covered`` flags locations with at
    least one visible value; rows without any stay 0 and are excluded from
    scoring by the caller.
    """
    vis = m_cond.astype(bool)
    t = np.asarray(dataset.times, dtype=np.float64)
    estimate = np.zeros_like(dataset.Y)
    covered = vis.any(axis=1)
    for loc in range(dataset.n_locations):
        if not covered[loc]:
            continue
        xp = t[vis[loc]]
        fp = dataset.Y[loc, vis[loc]]
        estimate[loc] = np.interp(t, xp, fp)
    return estimate, covered


def baseline_linear_interpolation(dataset: GridDataset, split: MaskSplit) -> MetricReport:
    estimate, covered = linear_interpolation_impute(dataset, split.m_cond)
    locs, times = _points(split)
    keep = covered[locs]
    if not keep.all():
        warnings.warn(
            f"{int((~keep).sum())} evaluation points at fully hidden locations "
            "skipped by the interpolation baseline",
            stacklevel=2,
        )
    locs, times = locs[keep], times[keep]
    if locs.size == 0:
        raise MetricError("interpolation baseline has no scoreable points")
    return _report(estimate[locs, times], dataset.Y[locs, times], locs, dataset)


def matrix_factorization_impute(
    y: np.ndarray,
    m: np.ndarray,
    rank: int = 10,
    lam: float = 0.1,
    iters: int = 100,
    seed: int = 0,
) -> tuple[np.ndarray, list]:
    """Alternating ridge least squares on the visible entries of a K×L matrix.

    Returns the U·Vᵀ reconstruction and the per-iteration objective
    Σ_visible (y − uvᵀ)² + λ(‖U‖² + ‖V‖²), which block-coordinate descent
    makes non-increasing.
    """
    if rank < 1:
        raise MetricError(f"factorization rank must be at least 1, got {rank}")
    k, l = y.shape
    w = m.astype(bool)
    rng = Rng(seed).derive("mf")
    u = 0.1 * rng.normal(size=(k, rank))
    v = 0.1 * rng.normal(size=(l, rank))
    eye = np.eye(rank)

    def objective():
        resid = (y - u @ v.T)[w]
        return float((resid ** 2).sum() + lam * ((u ** 2).sum() + (v ** 2).sum()))

    def ridge_solve(a, b):
        try:
            return np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(a, b, rcond=None)[0]

    objectives = []
    for _ in range(iters):
        for i in range(k):
            sel = w[i]
            if not sel.any():
                u[i] = 0.0
                continue
            vs = v[sel]
            u[i] = ridge_solve(vs.T @ vs + lam * eye, vs.T @ y[i, sel])
        for j in range(l):
            sel = w[:, j]
            if not sel.any():
                v[j] = 0.0
                continue
            us = u[sel]
            v[j] = ridge_solve(us.T @ us + lam * eye, us.T @ y[sel, j])
        objectives.append(objective())
    return u @ v.T, objectives


def baseline_matrix_factorization(
    dataset: GridDataset,
    split: MaskSplit,
    rank: int = 10,
    lam: float = 0.1,
    iters: int = 100,
    seed: int = 0,
) -> MetricReport:
    estimate, _ = matrix_factorization_impute(
        dataset.Y * split.m_cond, split.m_cond, rank, lam, iters, seed
    )
    locs, times = _points(split)
    return _report(estimate[locs, times], dataset.Y[locs, times], locs, dataset)


def spatial_error_map(report: MetricReport) -> tuple[np.ndarray, str]:
    """Per-location MAE grid plus a CSV table of the same numbers.

    Grid cells without evaluation points hold NaN. The CSV carries one line
    per scored location: row, col, mae, n, and the land-cover label when the
    report has one.
    """
    if not report.per_location:
        raise MetricError("report has no per-location scores")
    grid = np.full((report.height, report.width), np.nan)
    has_landcover = report.landcover is not None
    lines = ["row,col,mae,n,landcover" if has_landcover else "row,col,mae,n"]
    for loc in sorted(report.per_location):
        loc_mae, n = report.per_location[loc]
        r, c = divmod(loc, report.width)
        grid[r, c] = loc_mae
        base = f"{r},{c},{loc_mae!r},{n}"
        if has_landcover:
            base += f",{report.landcover[loc]}"
        lines.append(base)
    return grid, "\n".join(lines) + "\n"
