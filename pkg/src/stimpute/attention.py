"""Scaled dot-product attention, multi-head self-attention, and the
shifted-window variant.

Shapes follow one convention: token sequences are (..., n, d) with arbitrary
leading batch axes, and spatial grids are (..., H, W, C). Window partitioning
turns a grid into (..., n_windows, tokens, C) so one batched msa call covers
every window of every batch element at once.

Cross-window masking is additive: blocked query/key pairs get -1e9 before the
softmax, which underflows to an exactly-zero weight at 64-bit precision; a
safety clamp zeroes anything below 1e-30.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import Parameter, Tensor, layer_norm
from .errors import ConfigError, ContractError, ShapeError
from .rng import Rng

__all__ = [
    "AttentionParams",
    "WindowSpec",
    "SwBlockParams",
    "attention",
    "attention_weights",
    "msa",
    "window_partition",
    "window_merge",
    "cyclic_shift",
    "inverse_shift",
    "sw_attention_mask",
    "sw_msa",
    "sw_msa_stack",
]

NEG_INF = -1e9

# Post-softmax weights below this are forced to exactly zero when a mask is
# in play; -1e9 already underflows well past it.
WEIGHT_FLOOR = 1e-30


def uniform_init(rng: Rng, shape: tuple, fan_in: int) -> np.ndarray:
    """Fan-in scaled uniform init, the package-wide default for linear maps."""
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class WindowSpec:
    """A square-windowed attention pattern: extents plus cyclic shift."""

    window_h: int
    window_w: int
    shift: int = 0

    def __post_init__(self):
        if not 0 <= self.shift < min(self.window_h, self.window_w):
            raise ConfigError(
                f"shift {self.shift} must lie in [0, min window extent "
                f"{min(self.window_h, self.window_w)})"
            )


class AttentionParams:
    """Per-head Q/K/V projections plus the output map.

    Projections are stored stacked: wq/wk/wv have shape (heads, d_model, d_k)
    and wo is (d_model, d_model) applied to the concatenated heads.
    """

    def __init__(self, prefix: str, d_model: int, heads: int, rng: Rng):
        if d_model % heads:
            raise ConfigError(f"head count {heads} does not divide d_model {d_model}")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        shape = (heads, d_model, self.d_k)
        self.wq = Parameter(f"{prefix}.wq", uniform_init(rng, shape, d_model))
        self.wk = Parameter(f"{prefix}.wk", uniform_init(rng, shape, d_model))
        self.wv = Parameter(f"{prefix}.wv", uniform_init(rng, shape, d_model))
        self.wo = Parameter(f"{prefix}.wo", uniform_init(rng, (d_model, d_model), d_model))

    def parameters(self) -> list[Parameter]:
        return [self.wq, self.wk, self.wv, self.wo]


@dataclass
class SwBlockParams:
    """One element of a shifted-window stack: attention plus its norm affine."""

    attn: AttentionParams
    gamma: Parameter
    beta: Parameter

    def parameters(self) -> list[Parameter]:
        return self.attn.parameters() + [self.gamma, self.beta]


def _swap_last(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return t.transpose(tuple(axes))


def _check_mask(mask: np.ndarray):
    blocked_rows = np.all(mask < 0, axis=-1)
    if blocked_rows.any():
        raise ContractError(
            "attention mask blocks every key for at least one query; "
            "mask construction must leave each token a partner"
        )


def attention_weights(q: Tensor, k: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax of scaled dot-product scores; masked pairs get exactly zero."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ _swap_last(k)) * scale
    if mask is not None:
        _check_mask(mask)
        scores = scores + Tensor(mask)
    weights = scores.softmax(axis=-1)
    if mask is not None:
        weights = weights * (weights.data >= WEIGHT_FLOOR).astype(np.float64)
    return weights


def attention(
    q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None
) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes."""
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(
            f"key rows {k.shape[-2]} != value rows {v.shape[-2]}"
        )
    return attention_weights(q, k, mask) @ v


def msa(x: Tensor, params: AttentionParams, mask: Optional[np.ndarray] = None) -> Tensor:
    """Multi-head self-attention over (..., n, d_model) token sequences.

    Heads run stacked along a synthetic axis inserted at -3; a mask must
    broadcast against scores of shape (..., heads, n, n) (a plain (n, n) mask
    always does).
    """
    if x.shape[-1] != params.d_model:
        raise ShapeError(
            f"input feature dim {x.shape[-1]} != d_model {params.d_model}"
        )
    n = x.shape[-2]
    batch = x.shape[:-2]
    xh = x.reshape(batch + (1, n, params.d_model))
    q = xh @ params.wq.tensor
    k = xh @ params.wk.tensor
    v = xh @ params.wv.tensor
    out = attention(q, k, v, mask)  # (..., heads, n, d_k)
    m = out.ndim
    perm = tuple(range(m - 3)) + (m - 2, m - 3, m - 1)
    merged = out.transpose(perm).reshape(batch + (n, params.d_model))
    return merged @ params.wo.tensor


def _split_grid(grid: Tensor, spec: WindowSpec) -> tuple:
    if grid.ndim < 3:
        raise ShapeError(f"grid must be (..., H, W, C), got shape {grid.shape}")
    h, w, c = grid.shape[-3], grid.shape[-2], grid.shape[-1]
    if h % spec.window_h or w % spec.window_w:
        raise ConfigError(
            f"grid {h}x{w} not divisible by window {spec.window_h}x{spec.window_w}"
        )
    return h, w, c, h // spec.window_h, w // spec.window_w


def window_partition(grid: Tensor, spec: WindowSpec) -> Tensor:
    """(..., H, W, C) -> (..., n_windows, wh*ww, C), row-major windows."""
    h, w, c, nh, nw = _split_grid(grid, spec)
    batch = grid.shape[:-3]
    b = len(batch)
    x = grid.reshape(batch + (nh, spec.window_h, nw, spec.window_w, c))
    x = x.transpose(tuple(range(b)) + (b, b + 2, b + 1, b + 3, b + 4))
    return x.reshape(batch + (nh * nw, spec.window_h * spec.window_w, c))


def window_merge(windows: Tensor, spec: WindowSpec, height: int, width: int) -> Tensor:
    """Inverse of window_partition back to (..., H, W, C)."""
    nh, nw = height // spec.window_h, width // spec.window_w
    c = windows.shape[-1]
    batch = windows.shape[:-3]
    b = len(batch)
    x = windows.reshape(batch + (nh, nw, spec.window_h, spec.window_w, c))
    x = x.transpose(tuple(range(b)) + (b, b + 2, b + 1, b + 3, b + 4))
    return x.reshape(batch + (height, width, c))


def cyclic_shift(grid: Tensor, shift: int) -> Tensor:
    """Roll both spatial axes by -shift (content at (0,0) wraps to the far corner)."""
    if shift == 0:
        return grid
    return grid.roll((-shift, -shift), axis=(-3, -2))


def inverse_shift(grid: Tensor, shift: int) -> Tensor:
    if shift == 0:
        return grid
    return grid.roll((shift, shift), axis=(-3, -2))


def sw_attention_mask(height: int, width: int, spec: WindowSpec) -> np.ndarray:
    """Additive (n_windows, tokens, tokens) mask for one shifted partition.

    Tokens that came from different pre-shift window regions (region id =
    (row // wh, col // ww) in original coordinates) must not attend to each
    other; their pairs get -1e9, everything else 0. Shift 0 yields all zeros.
    """
    if height % spec.window_h or width % spec.window_w:
        raise ConfigError(
            f"grid {height}x{width} not divisible by window "
            f"{spec.window_h}x{spec.window_w}"
        )
    rows = np.arange(height)
    cols = np.arange(width)
    # Post-shift cell (i, j) holds pre-shift cell (i + shift, j + shift).
    src_r = (rows + spec.shift) % height
    src_c = (cols + spec.shift) % width
    region = (src_r[:, None] // spec.window_h) * (width // spec.window_w + 1) \
        + (src_c[None, :] // spec.window_w)
    region_windows = window_partition(Tensor(region[:, :, None].astype(float)), spec)
    ids = region_windows.data[:, :, 0]  # (n_windows, tokens)
    same = ids[:, :, None] == ids[:, None, :]
    return np.where(same, 0.0, NEG_INF)


def sw_msa(grid: Tensor, spec: WindowSpec, params: AttentionParams) -> Tensor:
    """One shifted-window attention pass over (..., H, W, C)."""
    h, w, _, _, _ = _split_grid(grid, spec)
    x = cyclic_shift(grid, spec.shift)
    windows = window_partition(x, spec)
    if spec.shift:
        mask = sw_attention_mask(h, w, spec)[:, None, :, :]  # broadcast over heads
    else:
        mask = None
    out = msa(windows, params, mask)
    merged = window_merge(out, spec, h, w)
    return inverse_shift(merged, spec.shift)


def sw_msa_stack(
    grid: Tensor, specs: Sequence[WindowSpec], params: Sequence[SwBlockParams]
) -> Tensor:
    """Iterate x <- layer_norm(x + sw_msa_i(x)) over the window schedule."""
    if not specs:
        raise ContractError("sw_msa_stack needs at least one window spec")
    if len(specs) != len(params):
        raise ContractError(
            f"{len(specs)} window specs but {len(params)} parameter blocks"
        )
    x = grid
    for spec, block in zip(specs, params):
        x = layer_norm(x + sw_msa(x, spec, block.attn), block.gamma.tensor, block.beta.tensor)
    return x
