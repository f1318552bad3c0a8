"""Deterministic synthetic data for desk-scale experiments.

Two generators: a correlated spatiotemporal field with an informative
precipitation-like covariate (a stand-in for satellite soil-moisture inputs),
and a moving-blob frame sequence with a value-biased masking scheme for the
appendix-style benchmark. Everything is a pure function of its spec, seed
included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, uniform_filter

from .dataio import GridDataset, grid_coords
from .errors import ConfigError
from .rng import Rng

__all__ = [
    "FieldSpec",
    "BlobSpec",
    "synth_field",
    "moving_blobs",
    "apply_biased_mcar",
    "blob_dataset",
]


@dataclass
class FieldSpec:
    """Knobs for the correlated-field generator.

    ``phi`` is the temporal AR(1) coefficient, ``ell`` the Gaussian spatial
    smoothing scale in cells, ``beta`` the weight of the informative
    covariate in the target, ``sigma`` the white observation noise, and
    ``n_noise_covariates`` the count of uninformative distractor features.
    """

    height: int = 24
    width: int = 24
    length: int = 144
    phi: float = 0.8
    ell: float = 2.0
    beta: float = 0.6
    sigma: float = 0.1
    n_noise_covariates: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.phi < 1.0:
            raise ConfigError(f"AR coefficient must be in [0, 1), got {self.phi}")
        if self.ell < 0:
            raise ConfigError(f"smoothing scale must be nonnegative, got {self.ell}")
        if self.sigma < 0:
            raise ConfigError(f"noise scale must be nonnegative, got {self.sigma}")
        if min(self.height, self.width, self.length) < 1:
            raise ConfigError("field dimensions must be positive")
        if self.n_noise_covariates < 0:
            raise ConfigError("n_noise_covariates must be nonnegative")


def _smooth(field: np.ndarray, ell: float) -> np.ndarray:
    if ell <= 0:
        return field
    return gaussian_filter(field, sigma=ell, mode="reflect")


def _smooth_noise(rng: Rng, shape, ell: float) -> np.ndarray:
    """Unit-variance spatially smoothed white noise, frame by frame."""
    frames = np.empty(shape)
    for t in range(shape[0]):
        f = _smooth(rng.normal(size=shape[1:]), ell)
        sd = f.std()
        frames[t] = f / sd if sd > 0 else f
    return frames


def synth_field(spec: FieldSpec) -> GridDataset:
    """Correlated field dataset with everything observed.

    The latent field is spatially smoothed noise evolving as AR(1) with a
    stationary start. The target adds ``beta`` times a sparse smoothed
    "precipitation" covariate plus white noise, then maps affinely into
    [0.05, 0.45]. Arrays are float32-quantized so a save/load round trip is
    bit-exact.
    """
    rng = Rng(spec.seed)
    h, w, length = spec.height, spec.width, spec.length
    shape = (length, h, w)

    innovations = _smooth_noise(rng.derive("latent"), shape, spec.ell)
    latent = np.empty(shape)
    latent[0] = innovations[0] / np.sqrt(1.0 - spec.phi ** 2)
    for t in range(1, length):
        latent[t] = spec.phi * latent[t - 1] + innovations[t]

    rain_rng = rng.derive("rain")
    impulses = (rain_rng.random(shape) < 0.1) * rain_rng.random(shape)
    precip = np.empty(shape)
    for t in range(length):
        precip[t] = _smooth(impulses[t], spec.ell)
    p_sd = precip.std()
    if p_sd > 0:
        precip = (precip - precip.mean()) / p_sd

    y = latent + spec.beta * precip
    if spec.sigma > 0:
        y = y + spec.sigma * rng.derive("noise").normal(size=shape)
    lo, hi = y.min(), y.max()
    if hi > lo:
        y = 0.05 + 0.4 * (y - lo) / (hi - lo)
    else:
        y = np.full(shape, 0.25)

    covs = [precip]
    for j in range(spec.n_noise_covariates):
        covs.append(_smooth_noise(rng.derive("distractor", j), shape, spec.ell))

    k = h * w
    y_flat = y.reshape(length, k).T.astype(np.float32).astype(np.float64)
    x = np.stack(
        [c.reshape(length, k).T for c in covs], axis=-1
    ).astype(np.float32).astype(np.float64)
    d = len(covs)
    names = ["precip"] + [f"noise{j + 1}" for j in range(spec.n_noise_covariates)]
    return GridDataset(
        height=h,
        width=w,
        times=np.arange(length, dtype=np.int64),
        Y=y_flat,
        M=np.ones((k, length)),
        X=x,
        Z=np.zeros((k, length, d)),
        coords=grid_coords(h, w),
        cell_size_km=1.0,
        feature_names=names,
        epoch="2020-01-01",
    )


@dataclass
class BlobSpec:
    """Elliptical blob moving across frames with reflective walls."""

    size: int = 28
    frames: int = 10
    radius: float = 5.0
    speed: float = 1.5
    spin: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.size < 4 or self.frames < 1:
            raise ConfigError("blob frames need size >= 4 and frames >= 1")
        if self.radius <= 0 or self.radius > self.size / 2 - 1:
            raise ConfigError(
                f"radius {self.radius} does not fit a {self.size}-cell frame"
            )
        if self.speed < 0:
            raise ConfigError("speed must be nonnegative")


def _reflect(value: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fold positions into [lo, hi] as a triangle wave (bouncing walls)."""
    span = hi - lo
    phase = np.mod(value - lo, 2.0 * span)
    return lo + np.where(phase > span, 2.0 * span - phase, phase)


def _raster_ellipse(size, center, major, minor, angle):
    rr, cc = np.mgrid[0:size, 0:size]
    dr = rr - center[0]
    dc = cc - center[1]
    ca, sa = np.cos(angle), np.sin(angle)
    u = dr * ca + dc * sa
    v = -dr * sa + dc * ca
    return ((u / major) ** 2 + (v / minor) ** 2 <= 1.0).astype(np.float64)


def moving_blobs(spec: BlobSpec, n_sequences: int) -> np.ndarray:
    """(n_sequences, frames, size, size) binary frames in {0, 1}.

    Each sequence gets its own derived stream: a random start position and
    heading, constant speed with reflective walls, and a slowly rotating
    elliptical shape of constant area.
    """
    if n_sequences < 1:
        raise ConfigError("need at least one sequence")
    out = np.empty((n_sequences, spec.frames, spec.size, spec.size))
    margin = spec.radius + 1.0
    lo, hi = margin, spec.size - 1 - margin
    if hi < lo:
        raise ConfigError("blob radius leaves no room to move")
    minor = 0.6 * spec.radius
    for s in range(n_sequences):
        srng = Rng(spec.seed).derive("sequence", s)
        start = lo + (hi - lo) * srng.random(2)
        heading = 2.0 * np.pi * srng.random()
        phase0 = 2.0 * np.pi * srng.random()
        velocity = spec.speed * np.array([np.sin(heading), np.cos(heading)])
        for t in range(spec.frames):
            raw = start + t * velocity
            center = _reflect(raw, lo, hi)
            angle = phase0 + spec.spin * t
            out[s, t] = _raster_ellipse(
                spec.size, center, spec.radius, minor, angle
            )
    return out


def apply_biased_mcar(
    frames: np.ndarray, rate: float, white_bias: float = 2.0, rng: Rng = None
) -> np.ndarray:
    """Observation masks hiding bright pixels ``white_bias`` times as often.

    Per frame, the black-pixel hiding probability p solves
    p * (black_fraction + white_bias * white_fraction) = rate, so the
    expected hidden fraction is exactly ``rate``. Returns masks shaped like
    ``frames`` with 1 = observed.
    """
    if not 0.0 < rate < 1.0:
        raise ConfigError(f"hiding rate must be in (0, 1), got {rate}")
    if white_bias <= 0:
        raise ConfigError(f"white_bias must be positive, got {white_bias}")
    if rng is None:
        raise ConfigError("apply_biased_mcar needs an explicit rng")
    frames = np.asarray(frames, dtype=np.float64)
    white = frames > 0.5
    flat_frames = white.reshape(-1, frames.shape[-2], frames.shape[-1])
    mask = np.empty(flat_frames.shape)
    for f in range(flat_frames.shape[0]):
        w_frac = flat_frames[f].mean()
        p_black = rate / (1.0 - w_frac + white_bias * w_frac)
        p_white = white_bias * p_black
        if p_white > 1.0:
            raise ConfigError(
                f"infeasible masking: white hiding probability {p_white:.3f} "
                "exceeds 1; lower the rate or the bias"
            )
        p = np.where(flat_frames[f], p_white, p_black)
        mask[f] = (rng.random(p.shape) >= p).astype(np.float64)
    return mask.reshape(frames.shape)


def blob_dataset(
    frames: np.ndarray, mask: np.ndarray, neighbor_radius: int = 0
) -> GridDataset:
    """Wrap one (T, H, W) frame sequence as a grid dataset.

    With ``neighbor_radius`` = 0 the dataset carries no covariates. A positive
    radius r adds two per-cell features summarizing the observed box of
    (2r+1) x (2r+1) pixels around each cell, excluding the cell itself:

    * ``nb_mean``: mean of the visible pixel values in the box (Z = 1 where
      the box has no visible pixel),
    * ``nb_vis``: fraction of the box that is visible, counting positions
      beyond the frame edge as unobserved.

    Both derive purely from the masked frames, so they expose no hidden
    values, only the local context an imputer is allowed to see.
    """
    t, h, w = frames.shape
    k = h * w
    if neighbor_radius < 0:
        raise ConfigError(f"neighbor radius must be nonnegative, got {neighbor_radius}")
    m = mask.reshape(t, k).T.astype(np.float64)
    y = frames.reshape(t, k).T * m
    if neighbor_radius == 0:
        x = np.zeros((k, t, 0))
        z = np.zeros((k, t, 0))
        names = []
    else:
        maskf = np.asarray(mask, dtype=np.float64)
        side = 2 * neighbor_radius + 1
        area = float(side * side)
        masked_vals = np.asarray(frames, dtype=np.float64) * maskf
        # Box sums via uniform_filter (which averages over the full box, so
        # multiply back), then drop the center pixel's own contribution.
        sum_y = uniform_filter(masked_vals, size=(1, side, side), mode="constant") * area
        sum_m = uniform_filter(maskf, size=(1, side, side), mode="constant") * area
        nb_count = np.maximum(sum_m - maskf, 0.0)
        nb_sum = sum_y - masked_vals
        has_nb = nb_count > 0.5
        nb_mean = np.divide(nb_sum, nb_count, out=np.zeros_like(nb_sum), where=has_nb)
        nb_vis = nb_count / (area - 1.0)
        x = np.stack(
            [nb_mean.reshape(t, k).T, nb_vis.reshape(t, k).T], axis=2
        )
        z = np.zeros((k, t, 2))
        z[:, :, 0] = (~has_nb).reshape(t, k).T
        names = ["nb_mean", "nb_vis"]
    return GridDataset(
        height=h,
        width=w,
        times=np.arange(t, dtype=np.int64),
        Y=y,
        M=m,
        X=x,
        Z=z,
        coords=grid_coords(h, w),
        cell_size_km=1.0,
        feature_names=names,
    )
