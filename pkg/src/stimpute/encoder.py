"""Input encoding: values, covariates, and positional information to latents.

Every cell (s, t) of a sample becomes a C-vector

    h(s, t) = E_Y(s, t) + E_X(s, t) + E_time(t) + E_space(s)

where hidden cells contribute a learned mask token instead of their (unseen)
value, covariates pass through a shared MLP, time enters as sinusoidal
encodings of the absolute index, and space as an MLP of global normalized
coordinates.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tensor, as_tensor
from .errors import ConfigError, ContractError
from .rng import Rng

__all__ = [
    "MlpParams",
    "EncoderParams",
    "encode_values",
    "temporal_encoding",
    "spatial_embedding",
    "combine",
    "encode_sample",
]


def _uniform(rng: Rng, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class MlpParams:
    """Two-layer perceptron: max(0, x W1 + b1) W2 + b2."""

    def __init__(self, prefix: str, d_in: int, hidden: int, d_out: int, rng: Rng):
        self.d_in = d_in
        self.hidden = hidden
        self.d_out = d_out
        self.w1 = Parameter(f"{prefix}.w1", _uniform(rng, (d_in, hidden), d_in))
        self.b1 = Parameter(f"{prefix}.b1", np.zeros(hidden))
        self.w2 = Parameter(f"{prefix}.w2", _uniform(rng, (hidden, d_out), hidden))
        self.b2 = Parameter(f"{prefix}.b2", np.zeros(d_out))

    def apply(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        hidden = (x @ self.w1.tensor + self.b1.tensor).relu()
        return hidden @ self.w2.tensor + self.b2.tensor

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def n_parameters(self) -> int:
        return self.d_in * self.hidden + self.hidden + self.hidden * self.d_out + self.d_out


class EncoderParams:
    """Value/covariate/spatial maps plus the mask token, all outputting C dims."""

    def __init__(self, d_in: int, c: int, hidden: int, rng: Rng):
        self.c = c
        self.value_mlp = MlpParams("encoder.value", 1, hidden, c, rng)
        self.mask_token = Parameter("encoder.mask_token", np.zeros(c))
        self.covariate_mlp = MlpParams("encoder.covariate", d_in, hidden, c, rng)
        self.spatial_mlp = MlpParams("encoder.spatial", 2, hidden, c, rng)

    def parameters(self) -> list[Parameter]:
        return (
            self.value_mlp.parameters()
            + [self.mask_token]
            + self.covariate_mlp.parameters()
            + self.spatial_mlp.parameters()
        )


def encode_values(y: np.ndarray, m: np.ndarray, params: EncoderParams) -> Tensor:
    """MLP(value) where visible, the mask token where hidden.

    ``m`` is the conditioning mask; multiplying the value branch by it screens
    hidden entries so their stored numbers cannot reach the output.
    """
    if y.shape != m.shape:
        raise ContractError(f"value/mask shapes differ: {y.shape} vs {m.shape}")
    m3 = np.asarray(m, dtype=np.float64)[..., None]
    encoded = params.value_mlp.apply(Tensor(np.asarray(y, dtype=np.float64)[..., None]))
    return encoded * m3 + params.mask_token.tensor * (1.0 - m3)


def temporal_encoding(t, c: int) -> np.ndarray:
    """Sinusoidal position codes: dim 2i = sin(t / 10000^(2i/c)), 2i+1 = cos.

    ``t`` may be a scalar or an array of absolute time indices; output gains a
    trailing axis of length c.
    """
    if c % 2:
        raise ConfigError(f"temporal encoding needs an even dimension, got {c}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    i = np.arange(c // 2)
    angles = t_arr[..., None] / (10000.0 ** (2.0 * i / c))
    out = np.empty(t_arr.shape + (c,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    if np.isscalar(t) or np.ndim(t) == 0:
        return out[0]
    return out


def spatial_embedding(coords: np.ndarray, params: EncoderParams) -> Tensor:
    """MLP over global normalized (row, col) pairs."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != 2:
        raise ContractError(f"coords must end in (row, col) pairs, got shape {coords.shape}")
    return params.spatial_mlp.apply(Tensor(coords))


def combine(e_y, e_x, e_time, e_space) -> Tensor:
    """Element-wise sum of the four encodings, broadcasting as needed."""
    parts = [as_tensor(p) for p in (e_y, e_x, e_time, e_space)]
    try:
        np.broadcast_shapes(*(p.shape for p in parts))
    except ValueError:
        raise ContractError(
            "encoder terms do not broadcast: "
            + ", ".join(str(p.shape) for p in parts)
        ) from None
    return parts[0] + parts[1] + parts[2] + parts[3]


def encode_sample(
    y: np.ndarray,
    m_cond: np.ndarray,
    x: np.ndarray,
    coords: np.ndarray,
    window_start: int,
    params: EncoderParams,
) -> Tensor:
    """Full encoding of one (tile_K, window_L) sample into (tile_K, L, C).

    Time indices are absolute (window_start + local), so overlapping windows
    agree on the encoding of a shared time point.
    """
    k, l = y.shape
    e_y = encode_values(y, m_cond, params)
    e_x = params.covariate_mlp.apply(Tensor(np.asarray(x, dtype=np.float64)))
    e_time = temporal_encoding(window_start + np.arange(l), params.c)[None, :, :]
    e_space = spatial_embedding(coords, params).reshape(k, 1, params.c)
    return combine(e_y, e_x, e_time, e_space)
