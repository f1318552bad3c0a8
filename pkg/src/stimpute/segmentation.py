"""Cut a grid dataset into tile x window samples and reassemble predictions.

Training and inference both operate on fixed-size spatiotemporal chunks:
square spatial tiles crossed with sliding temporal windows. Overlapping
chunks are averaged on reassembly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dataio import GridDataset
from .errors import ContractError, ReconstructionError

__all__ = [
    "Sample",
    "ImputationResult",
    "temporal_windows",
    "spatial_tiles",
    "make_samples",
    "reconstruct",
]


@dataclass
class Sample:
    """One tile x window chunk of a dataset.

    Arrays are views into per-sample copies: Y, M, m_cond are (tile_K,
    window_L); X is (tile_K, window_L, D). ``m_cond`` is the conditioning
    mask (what the model may look at) and never exceeds M. ``coords`` keeps
    the global normalized coordinates so tiles share one spatial map;
    ``window_start`` anchors local time indices to absolute ones.
    ``grid_shape`` = (height, width, L) of the source grid, carried so a bag
    of samples can be reassembled without the dataset at hand.
    """

    tile_origin: tuple[int, int]
    window_start: int
    tile: int
    Y: np.ndarray
    M: np.ndarray
    m_cond: np.ndarray
    X: np.ndarray
    coords: np.ndarray
    grid_shape: tuple[int, int, int]

    @property
    def window_length(self) -> int:
        return self.Y.shape[1]

    def location_indices(self) -> np.ndarray:
        """Global location index for each tile cell, row-major within the tile."""
        r0, c0 = self.tile_origin
        width = self.grid_shape[1]
        rows = r0 + np.arange(self.tile)
        cols = c0 + np.arange(self.tile)
        return (rows[:, None] * width + cols[None, :]).reshape(-1)

    def with_conditioning(self, m_cond: np.ndarray) -> "Sample":
        if m_cond.shape != self.M.shape:
            raise ContractError(
                f"conditioning mask shape {m_cond.shape} != sample shape {self.M.shape}"
            )
        if np.any(m_cond > self.M):
            raise ContractError("conditioning mask exceeds observation mask")
        return replace(self, m_cond=m_cond)


@dataclass
class ImputationResult:
    """Full-grid estimate with per-cell coverage counts."""

    estimate: np.ndarray
    counts: np.ndarray


def temporal_windows(L: int, length: int = 72, stride: int = 12) -> list[tuple[int, int]]:
    """Sliding [start, start + length) ranges covering every time index.

    Starts advance by ``stride``; when the last full stride window stops short
    of L, one extra window anchored at L - length is appended so the tail is
    covered.
    """
    if length > L:
        raise ContractError(f"window length {length} exceeds series length {L}")
    if not 0 < stride <= length:
        # A stride beyond the window length would skip time points outright.
        raise ContractError(f"stride must lie in [1, length], got {stride}")
    starts = list(range(0, L - length + 1, stride))
    if starts[-1] + length < L:
        starts.append(L - length)
    return [(s, s + length) for s in starts]


def spatial_tiles(height: int, width: int, tile: int = 12) -> list[tuple[int, int]]:
    """Tile origins on a regular lattice, flush-anchoring the last row/column.

    Axes divisible by ``tile`` get non-overlapping tiles; otherwise the final
    origin is pulled back to size - tile so the boundary is covered (that tile
    overlaps its neighbor).
    """
    if tile > height or tile > width:
        raise ContractError(f"tile {tile} exceeds grid {height}x{width}")

    def axis_origins(size: int) -> list[int]:
        origins = list(range(0, size - tile + 1, tile))
        if origins[-1] + tile < size:
            origins.append(size - tile)
        return origins

    return [(r, c) for r in axis_origins(height) for c in axis_origins(width)]


def make_samples(
    dataset: GridDataset,
    length: int = 72,
    stride: int = 12,
    tile: int = 12,
) -> list[Sample]:
    """One Sample per (window, tile) pair; conditioning starts equal to M."""
    windows = temporal_windows(dataset.n_times, length, stride)
    tiles = spatial_tiles(dataset.height, dataset.width, tile)
    grid_shape = (dataset.height, dataset.width, dataset.n_times)
    samples = []
    for start, stop in windows:
        for r0, c0 in tiles:
            rows = r0 + np.arange(tile)
            cols = c0 + np.arange(tile)
            locs = (rows[:, None] * dataset.width + cols[None, :]).reshape(-1)
            samples.append(
                Sample(
                    tile_origin=(r0, c0),
                    window_start=start,
                    tile=tile,
                    Y=dataset.Y[locs, start:stop].copy(),
                    M=dataset.M[locs, start:stop].copy(),
                    m_cond=dataset.M[locs, start:stop].copy(),
                    X=dataset.X[locs, start:stop].copy(),
                    coords=dataset.coords[locs].copy(),
                    grid_shape=grid_shape,
                )
            )
    return samples


def reconstruct(
    samples: Sequence[Sample], imputations: Sequence[np.ndarray]
) -> ImputationResult:
    """Average per-sample predictions back onto the full grid.

    Each grid cell's estimate is the arithmetic mean of every sample-level
    prediction covering it, accumulated in sample order. Cells no sample
    covers raise a reconstruction error.
    """
    if len(samples) != len(imputations):
        raise ContractError(
            f"{len(samples)} samples but {len(imputations)} imputation arrays"
        )
    if not samples:
        raise ReconstructionError("no samples to reconstruct from")
    height, width, L = samples[0].grid_shape
    sums = np.zeros((height * width, L))
    counts = np.zeros((height * width, L))
    for sample, pred in zip(samples, imputations):
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != sample.Y.shape:
            raise ContractError(
                f"imputation shape {pred.shape} != sample shape {sample.Y.shape}"
            )
        locs = sample.location_indices()
        t0 = sample.window_start
        t1 = t0 + sample.window_length
        sums[locs, t0:t1] += pred
        counts[locs, t0:t1] += 1.0
    uncovered = np.argwhere(counts == 0)
    if uncovered.size:
        head = [tuple(int(v) for v in cell) for cell in uncovered[:5]]
        raise ReconstructionError(
            f"{len(uncovered)} grid cells not covered by any sample, first {head}"
        )
    return ImputationResult(estimate=sums / counts, counts=counts)
