"""Tile-size selection: per-location detrending, semivariogram, range finding.

The workflow fits a small linear model at every grid location, pools the
residuals into an empirical semivariogram over pairwise distances, and looks
for the lag where the semivariance flattens out. That plateau distance, in
cells, is the recommended spatial tile size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataio import GridDataset
from .errors import ContractError

__all__ = [
    "Semivariogram",
    "RangeResult",
    "location_residuals",
    "empirical_semivariogram",
    "detect_range",
    "variogram_csv",
]


@dataclass
class Semivariogram:
    """Binned Matheron semivariances.

    Bin b covers distances [edges[b], edges[b+1]). Bins without pairs have
    count 0 and NaN semivariance; downstream consumers treat them as absent.
    """

    edges: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    cell_size_km: float = 1.0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def populated(self) -> np.ndarray:
        return self.counts > 0


@dataclass
class RangeResult:
    """Detected stabilization distance and the tile size it suggests."""

    range_km: float
    tile_cells: int
    plateau: bool


def location_residuals(dataset: GridDataset) -> np.ndarray:
    """Residuals of per-location least squares of Y on [1; covariates].

    Only base (non-indicator) features enter the design. Cells that are
    missing, and whole locations with no more visible observations than
    design columns, come back as NaN. Rank-deficient designs fall back to a
    tiny ridge with a warning.
    """
    d = dataset.n_base_features
    cols = 1 + d
    residuals = np.full_like(dataset.Y, np.nan)
    deficient = []
    for loc in range(dataset.n_locations):
        vis = dataset.M[loc] == 1.0
        n_vis = int(vis.sum())
        if n_vis <= cols:
            continue
        a = np.empty((n_vis, cols))
        a[:, 0] = 1.0
        if d:
            a[:, 1:] = dataset.X[loc, vis, :d]
        y = dataset.Y[loc, vis]
        beta, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
        if rank < cols:
            deficient.append(loc)
            beta = np.linalg.solve(a.T @ a + 1e-8 * np.eye(cols), a.T @ y)
        residuals[loc, vis] = y - a @ beta
    if deficient:
        warnings.warn(
            f"rank-deficient linear model at {len(deficient)} locations "
            f"(e.g. {deficient[:3]}); used ridge fallback",
            stacklevel=2,
        )
    return residuals


def empirical_semivariogram(
    residuals: np.ndarray,
    coords: np.ndarray,
    cell_size_km: float,
    bin_width_km: float = 1.0,
) -> Semivariogram:
    """Matheron estimator pooled over time by pair counts.

    gamma(h) = sum over co-valid pairs in bin h of (r_i - r_j)^2, divided by
    twice the pair count. ``coords`` are (row, col) cell indices per
    location; distances are Euclidean in km. NaN residuals drop out pairwise.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    if residuals.ndim != 2 or coords.shape != (residuals.shape[0], 2):
        raise ContractError(
            f"residuals {residuals.shape} and coords {coords.shape} do not align"
        )
    if bin_width_km <= 0 or cell_size_km <= 0:
        raise ContractError("bin width and cell size must be positive")
    valid = np.isfinite(residuals)
    if not (valid.sum(axis=0) >= 2).any():
        raise ContractError("no time slice has two locations with residuals")

    pos = coords * cell_size_km
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    iu, ju = np.triu_indices(residuals.shape[0], k=1)
    pair_bins = np.floor(dist[iu, ju] / bin_width_km).astype(np.int64)
    n_bins = int(pair_bins.max()) + 1 if pair_bins.size else 1

    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=np.int64)
    for t in range(residuals.shape[1]):
        ok = valid[iu, t] & valid[ju, t]
        if not ok.any():
            continue
        sq = (residuals[iu[ok], t] - residuals[ju[ok], t]) ** 2
        b = pair_bins[ok]
        sums += np.bincount(b, weights=sq, minlength=n_bins)
        counts += np.bincount(b, minlength=n_bins)

    gamma = np.full(n_bins, np.nan)
    pop = counts > 0
    gamma[pop] = sums[pop] / (2.0 * counts[pop])
    edges = np.arange(n_bins + 1, dtype=np.float64) * bin_width_km
    return Semivariogram(
        edges=edges, gamma=gamma, counts=counts, cell_size_km=cell_size_km
    )


def _friendly_tile(cells: float) -> int:
    # Spatial windows default to 4x4, so recommend a multiple of 4 they divide.
    return max(4, 4 * int(round(cells / 4.0)))


def detect_range(vg: Semivariogram, rel_tol: float = 0.05) -> RangeResult:
    """Distance where the semivariance reaches and holds its sill.

    The sill is the mean semivariance over the top quartile of populated
    lags. The range is the smallest populated lag whose value is at least
    (1 - rel_tol) of the sill and never drops below that level at any larger
    populated lag. Without such a lag the maximum lag is returned with a
    warning.
    """
    pop = np.flatnonzero(vg.populated)
    if pop.size == 0:
        raise ContractError("semivariogram has no populated bins")
    lags = vg.centers[pop]
    values = vg.gamma[pop]
    n_tail = max(1, int(np.ceil(pop.size / 4)))
    sill = float(values[-n_tail:].mean())
    threshold = (1.0 - rel_tol) * sill

    # suffix minimum tells whether the curve stays above threshold from here on
    suffix_min = np.minimum.accumulate(values[::-1])[::-1]
    qualifying = np.flatnonzero((values >= threshold) & (suffix_min >= threshold))
    if qualifying.size == 0:
        warnings.warn(
            "semivariance shows no plateau; using the maximum lag", stacklevel=2
        )
        range_km = float(lags[-1])
        plateau = False
    else:
        range_km = float(lags[qualifying[0]])
        plateau = True
    return RangeResult(
        range_km=range_km,
        tile_cells=_friendly_tile(range_km / vg.cell_size_km),
        plateau=plateau,
    )


def truncate_lags(vg: Semivariogram, max_lag_km: float) -> Semivariogram:
    """Drop bins whose upper edge exceeds max_lag_km.

    On a bounded grid the largest lags rest on a handful of corner pairs, so
    their semivariances are too noisy to anchor range detection.
    """
    if max_lag_km <= 0:
        raise ContractError(f"max lag must be positive, got {max_lag_km}")
    n = int(np.count_nonzero(vg.edges[1:] <= max_lag_km))
    if n == 0:
        raise ContractError(f"no semivariogram bins lie within {max_lag_km} km")
    return Semivariogram(
        edges=vg.edges[: n + 1],
        gamma=vg.gamma[:n],
        counts=vg.counts[:n],
        cell_size_km=vg.cell_size_km,
    )


def variogram_csv(vg: Semivariogram) -> str:
    """Populated bins as ``lag_km,gamma,pairs`` lines for external plotting."""
    lines = ["lag_km,gamma,pairs"]
    centers = vg.centers
    for b in np.flatnonzero(vg.populated):
        lines.append(f"{float(centers[b])!r},{float(vg.gamma[b])!r},{int(vg.counts[b])}")
    return "\n".join(lines) + "\n"
