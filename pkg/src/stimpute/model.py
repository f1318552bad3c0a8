"""The full spatiotemporal transformer: config, parameters, forward pass.

A sample flows encoder -> N spatiotemporal attention layers -> output MLP.
Each layer runs temporal attention per location, spatial attention per time
slice (global MSA or a shifted-window stack), and a pointwise MLP, every
sub-block wrapped in residual + layer norm. Layers chain through an outer
residual h_{i+1} = h_i + L(h_i), and the output head consumes the
concatenation of all N layer outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attention import AttentionParams, SwBlockParams, WindowSpec, msa, sw_msa_stack
from .autodiff import Parameter, Tensor, concat, layer_norm
from .checkpoint import load_params, save_params
from .encoder import EncoderParams, MlpParams, encode_sample
from .errors import CheckpointError, ConfigError, ShapeError
from .rng import Rng
from .segmentation import Sample

__all__ = [
    "ModelConfig",
    "ModelParams",
    "st_layer_forward",
    "forward",
    "count_parameters",
    "select_covariates",
]

SPATIAL_VARIANTS = ("msa", "sw_msa")
COVARIATE_MODES = ("all", "none", "time_varying", "static")

DEFAULT_SCHEDULE = ((4, 4, 0), (4, 4, 2))


@dataclass
class ModelConfig:
    """Architecture switches; (config, seed) fully determines the parameters.

    ``d_in`` is the covariate feature count the encoder expects (after
    indicator augmentation). ``sw_schedule`` lists (window_h, window_w, shift)
    triples for the shifted-window spatial variant. ``use_time``/``use_space``
    ablate whole sub-blocks; ``covariate_mode`` zeroes feature groups at the
    encoder input.
    """

    d_in: int
    c: int = 64
    n_layers: int = 4
    temporal_heads: int = 1
    spatial_heads: int = 1
    spatial_variant: str = "sw_msa"
    sw_schedule: tuple = DEFAULT_SCHEDULE
    mlp_hidden: int = 64
    use_time: bool = True
    use_space: bool = True
    covariate_mode: str = "all"

    def __post_init__(self):
        self.sw_schedule = tuple(tuple(int(v) for v in w) for w in self.sw_schedule)
        if self.d_in < 0:
            raise ConfigError(f"d_in must be nonnegative, got {self.d_in}")
        if self.c % 2:
            raise ConfigError(f"latent dimension must be even, got {self.c}")
        if self.n_layers < 1:
            raise ConfigError(f"need at least one layer, got {self.n_layers}")
        if self.c % self.temporal_heads or self.c % self.spatial_heads:
            raise ConfigError(
                f"head counts ({self.temporal_heads}, {self.spatial_heads}) "
                f"must divide latent dimension {self.c}"
            )
        if self.spatial_variant not in SPATIAL_VARIANTS:
            raise ConfigError(
                f"spatial_variant must be one of {SPATIAL_VARIANTS}, "
                f"got {self.spatial_variant!r}"
            )
        if self.covariate_mode not in COVARIATE_MODES:
            raise ConfigError(
                f"covariate_mode must be one of {COVARIATE_MODES}, "
                f"got {self.covariate_mode!r}"
            )
        if self.spatial_variant == "sw_msa" and not self.sw_schedule:
            raise ConfigError("sw_msa variant needs a nonempty window schedule")
        self.window_specs()  # validates shift bounds

    def window_specs(self) -> list[WindowSpec]:
        return [WindowSpec(*w) for w in self.sw_schedule]

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in self.__dataclass_fields__}
        payload["sw_schedule"] = [list(w) for w in self.sw_schedule]
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"bad model config JSON: {err}") from err
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**payload)


class LayerParams:
    """Weights for one spatiotemporal attention layer."""

    def __init__(self, idx: int, config: ModelConfig, rng: Rng):
        c = config.c
        prefix = f"layer{idx}"
        self.time_attn: Optional[AttentionParams] = None
        self.space_attn: Optional[AttentionParams] = None
        self.space_blocks: list[SwBlockParams] = []
        if config.use_time:
            self.time_attn = AttentionParams(f"{prefix}.time", c, config.temporal_heads, rng)
            self.time_gamma = Parameter(f"{prefix}.time_norm.gamma", np.ones(c))
            self.time_beta = Parameter(f"{prefix}.time_norm.beta", np.zeros(c))
        if config.use_space:
            if config.spatial_variant == "msa":
                self.space_attn = AttentionParams(
                    f"{prefix}.space", c, config.spatial_heads, rng
                )
            else:
                for j in range(len(config.sw_schedule)):
                    self.space_blocks.append(
                        SwBlockParams(
                            attn=AttentionParams(
                                f"{prefix}.space.block{j}", c, config.spatial_heads, rng
                            ),
                            gamma=Parameter(f"{prefix}.space.block{j}.norm.gamma", np.ones(c)),
                            beta=Parameter(f"{prefix}.space.block{j}.norm.beta", np.zeros(c)),
                        )
                    )
            self.space_gamma = Parameter(f"{prefix}.space_norm.gamma", np.ones(c))
            self.space_beta = Parameter(f"{prefix}.space_norm.beta", np.zeros(c))
        self.mlp = MlpParams(f"{prefix}.mlp", c, config.mlp_hidden, c, rng)
        self.mlp_gamma = Parameter(f"{prefix}.mlp_norm.gamma", np.ones(c))
        self.mlp_beta = Parameter(f"{prefix}.mlp_norm.beta", np.zeros(c))

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        if self.time_attn is not None:
            out += self.time_attn.parameters() + [self.time_gamma, self.time_beta]
        if self.space_attn is not None:
            out += self.space_attn.parameters() + [self.space_gamma, self.space_beta]
        elif self.space_blocks:
            for block in self.space_blocks:
                out += block.parameters()
            out += [self.space_gamma, self.space_beta]
        out += self.mlp.parameters() + [self.mlp_gamma, self.mlp_beta]
        return out


class ModelParams:
    """All learned weights, keyed by unique dotted names."""

    def __init__(self, config: ModelConfig, rng: Rng):
        self.config = config
        self.encoder = EncoderParams(config.d_in, config.c, config.mlp_hidden, rng)
        self.layers = [LayerParams(i, config, rng) for i in range(config.n_layers)]
        self.output_mlp = MlpParams(
            "output", config.n_layers * config.c, config.mlp_hidden, 1, rng
        )

    def parameters(self) -> list[Parameter]:
        out = self.encoder.parameters()
        for layer in self.layers:
            out += layer.parameters()
        out += self.output_mlp.parameters()
        names = [p.name for p in out]
        assert len(names) == len(set(names)), "parameter names must be unique"
        return out

    def as_dict(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def save(self, path, extra_arrays: Optional[dict[str, np.ndarray]] = None):
        arrays = {p.name: p.data for p in self.parameters()}
        if extra_arrays:
            overlap = set(arrays) & set(extra_arrays)
            if overlap:
                raise CheckpointError(f"extra arrays collide with parameters: {overlap}")
            arrays.update(extra_arrays)
        save_params(path, arrays)

    @classmethod
    def load(cls, path, config: ModelConfig) -> tuple["ModelParams", dict[str, np.ndarray]]:
        """Restore weights for ``config``; returns (params, non-parameter arrays).

        The checkpoint must carry exactly the parameter set the config
        implies, matching shapes included; anything else is a config/
        checkpoint mismatch.
        """
        arrays = load_params(path)
        params = cls(config, Rng(0))
        expected = params.as_dict()
        missing = set(expected) - set(arrays)
        if missing:
            raise CheckpointError(
                f"checkpoint lacks parameters for this config, e.g. {sorted(missing)[:3]}"
            )
        for name, param in expected.items():
            stored = arrays[name]
            if stored.shape != param.data.shape:
                raise CheckpointError(
                    f"parameter {name} has shape {stored.shape} in checkpoint, "
                    f"config implies {param.data.shape}"
                )
            param.tensor.data = stored.astype(np.float64)
        extras = {k: v for k, v in arrays.items() if k not in expected}
        return params, extras


def select_covariates(x: np.ndarray, mode: str) -> np.ndarray:
    """Zero out the feature groups excluded by ``covariate_mode``.

    A feature counts as static when every location's series is constant over
    the window. Zeroing (rather than dropping) keeps parameter shapes, and
    checkpoints, identical across modes.
    """
    if mode == "all":
        return x
    if mode == "none":
        return np.zeros_like(x)
    if x.shape[-1] == 0:
        return x
    static = np.all(x == x[:, :1, :], axis=(0, 1))
    keep = static if mode == "static" else ~static
    return np.where(keep[None, None, :], x, 0.0)


def st_layer_forward(h: Tensor, layer: LayerParams, config: ModelConfig, tile: int) -> Tensor:
    """One layer: temporal attention, spatial attention, MLP, each with
    residual + norm; ablated sub-blocks are skipped wholesale."""
    if config.use_time:
        h_time = msa(h, layer.time_attn)
        h = layer_norm(h + h_time, layer.time_gamma.tensor, layer.time_beta.tensor)
    if config.use_space:
        k, l, c = h.shape
        ht = h.transpose((1, 0, 2))  # (L, K, C): one token sequence per time slice
        if config.spatial_variant == "msa":
            h_space = msa(ht, layer.space_attn)
        else:
            if tile * tile != k:
                raise ShapeError(
                    f"sample has {k} locations, not a {tile}x{tile} tile"
                )
            grid = ht.reshape(l, tile, tile, c)
            h_space = sw_msa_stack(grid, config.window_specs(), layer.space_blocks)
            h_space = h_space.reshape(l, k, c)
        h = layer_norm(
            h + h_space.transpose((1, 0, 2)),
            layer.space_gamma.tensor,
            layer.space_beta.tensor,
        )
    h = layer_norm(h + layer.mlp.apply(h), layer.mlp_gamma.tensor, layer.mlp_beta.tensor)
    return h


def forward(sample: Sample, params: ModelParams, config: ModelConfig) -> Tensor:
    """Predict every cell of a sample; output is (tile_K, window_L).

    Only the conditioning mask gates value access, so hidden cells'
    stored numbers never influence the result. Predictions cover observed and
    hidden cells alike.
    """
    if sample.X.shape[-1] != config.d_in:
        raise ShapeError(
            f"sample has {sample.X.shape[-1]} features, config expects {config.d_in}"
        )
    x = select_covariates(sample.X, config.covariate_mode)
    h = encode_sample(
        sample.Y, sample.m_cond, x, sample.coords, sample.window_start, params.encoder
    )
    collected = []
    for layer in params.layers:
        h = h + st_layer_forward(h, layer, config, sample.tile)
        collected.append(h)
    stacked = concat(collected, axis=-1)
    out = params.output_mlp.apply(stacked)
    k, l = sample.Y.shape
    return out.reshape(k, l)


def count_parameters(config: ModelConfig) -> int:
    """Closed-form size of the parameter store implied by ``config``."""
    c, hidden = config.c, config.mlp_hidden

    def mlp(d_in, d_out):
        return d_in * hidden + hidden + hidden * d_out + d_out

    def attn():
        return 4 * c * c  # three stacked projections + output map

    total = mlp(1, c) + c + mlp(config.d_in, c) + mlp(2, c)  # encoder (+ mask token)
    per_layer = mlp(c, c) + 2 * c  # pointwise MLP + its norm
    if config.use_time:
        per_layer += attn() + 2 * c
    if config.use_space:
        if config.spatial_variant == "msa":
            per_layer += attn() + 2 * c
        else:
            per_layer += len(config.sw_schedule) * (attn() + 2 * c) + 2 * c
    total += config.n_layers * per_layer
    total += mlp(config.n_layers * c, 1)  # output head
    return total
