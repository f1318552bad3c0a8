"""Load, validate, normalize, and persist gridded spatiotemporal datasets.

On-disk layout is a JSON manifest next to raw little-endian float32 array
files. Arrays are location-major: location index = row * width + col, then
time, then feature. Masks are stored as 0.0/1.0 floats.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DataError

__all__ = [
    "GridDataset",
    "NormalizationStats",
    "load_dataset",
    "save_dataset",
    "augment_missing_indicators",
    "normalize",
]

FORMAT_VERSION = 1

MISSING_SUFFIX = "_missing"


@dataclass
class GridDataset:
    """A gridded sensor dataset: target series, masks, and covariates.

    Arrays are float64 in memory. ``Y`` and ``M`` are (K, L) for K = height *
    width locations and L time steps; ``X`` and ``Z`` are (K, L, D). ``M`` = 1
    marks an observed target, ``Z`` = 1 marks a missing covariate (the value is
    zero-filled). ``coords`` holds per-location normalized (row, col) in
    [0, 1]^2. ``epoch`` is an optional ISO date anchoring ``times`` day indices
    to a calendar.
    """

    height: int
    width: int
    times: np.ndarray
    Y: np.ndarray
    M: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    coords: np.ndarray
    cell_size_km: float
    feature_names: list[str]
    landcover: Optional[np.ndarray] = None
    epoch: Optional[str] = None
    n_base_features: int = field(default=-1)

    def __post_init__(self):
        if self.n_base_features < 0:
            self.n_base_features = self.n_features

    @property
    def n_locations(self) -> int:
        return self.height * self.width

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def n_features(self) -> int:
        return self.X.shape[2]

    def positions_km(self) -> np.ndarray:
        """(K, 2) physical positions: (row, col) scaled by the cell size."""
        rows, cols = np.divmod(np.arange(self.n_locations), self.width)
        return np.stack([rows, cols], axis=1).astype(float) * self.cell_size_km

    def validate(self):
        """Check extents, mask values, and finiteness; raise DataError on violation."""
        k, l, d = self.n_locations, self.n_times, self.n_features
        if self.times.ndim != 1:
            raise DataError("times must be one-dimensional")
        if np.any(np.diff(self.times) <= 0):
            raise DataError("times must be strictly increasing")
        for name, arr, shape in [
            ("Y", self.Y, (k, l)),
            ("M", self.M, (k, l)),
            ("X", self.X, (k, l, d)),
            ("Z", self.Z, (k, l, d)),
            ("coords", self.coords, (k, 2)),
        ]:
            if arr.shape != shape:
                raise DataError(f"{name} has shape {arr.shape}, expected {shape}")
        for name, mask in [("M", self.M), ("Z", self.Z)]:
            if not np.isin(mask, (0.0, 1.0)).all():
                raise DataError(f"{name} must contain only 0 and 1")
        if not np.isfinite(self.Y[self.M == 1]).all():
            raise DataError("Y contains non-finite observed values")
        if d and not np.isfinite(self.X[self.Z == 0]).all():
            raise DataError("X contains non-finite observed values")
        if len(self.feature_names) != d:
            raise DataError(
                f"feature_names lists {len(self.feature_names)} names for {d} features"
            )
        if self.landcover is not None and self.landcover.shape != (k,):
            raise DataError(f"landcover has shape {self.landcover.shape}, expected ({k},)")


@dataclass
class NormalizationStats:
    """Per-feature and target standardization constants from observed entries."""

    y_mean: float
    y_std: float
    x_mean: np.ndarray
    x_std: np.ndarray

    def normalize_y(self, values: np.ndarray) -> np.ndarray:
        return (values - self.y_mean) / self.y_std

    def denormalize_y(self, values: np.ndarray) -> np.ndarray:
        return values * self.y_std + self.y_mean

    def to_arrays(self) -> dict[str, np.ndarray]:
        """Flatten into named arrays, e.g. for embedding in a checkpoint."""
        return {
            "norm.y_mean": np.array([self.y_mean]),
            "norm.y_std": np.array([self.y_std]),
            "norm.x_mean": np.asarray(self.x_mean, dtype=float),
            "norm.x_std": np.asarray(self.x_std, dtype=float),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "NormalizationStats":
        try:
            return cls(
                y_mean=float(arrays["norm.y_mean"][0]),
                y_std=float(arrays["norm.y_std"][0]),
                x_mean=np.asarray(arrays["norm.x_mean"], dtype=float),
                x_std=np.asarray(arrays["norm.x_std"], dtype=float),
            )
        except KeyError as missing:
            raise DataError(f"normalization record {missing} absent") from None


def grid_coords(height: int, width: int) -> np.ndarray:
    """Per-location (row, col) normalized so each axis spans [0, 1]."""
    rows, cols = np.divmod(np.arange(height * width), width)
    r = rows / (height - 1) if height > 1 else np.zeros_like(rows, dtype=float)
    c = cols / (width - 1) if width > 1 else np.zeros_like(cols, dtype=float)
    return np.stack([r, c], axis=1).astype(float)


def _read_f32(path: Path, name: str, count: int) -> np.ndarray:
    if not path.exists():
        raise DataError(f"{name} array file {path} does not exist")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != count:
        raise DataError(f"{name} array has {raw.size} values, expected {count}")
    return raw.astype(np.float64)


def _write_f32(path: Path, arr: np.ndarray):
    np.asarray(arr, dtype=np.float64).astype("<f4").tofile(path)


def load_dataset(manifest_path) -> GridDataset:
    """Read a manifest and its array files into a validated GridDataset.

    Covariate cells flagged missing (or stored non-finite) are zero-filled with
    Z set to 1. Target cells with M = 0 are zero-filled; their stored values
    are meaningless by contract. Features declared in ``categorical_features``
    are one-hot expanded.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read manifest {manifest_path}: {err}") from err

    for key in ("format_version", "height", "width", "cell_size_km",
                "times_file", "y_file", "m_file", "feature_names"):
        if key not in manifest:
            raise DataError(f"manifest missing required field {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise DataError(f"unsupported manifest format_version {manifest['format_version']}")

    height = int(manifest["height"])
    width = int(manifest["width"])
    feature_names = list(manifest["feature_names"])
    k, d = height * width, len(feature_names)
    base = manifest_path.parent

    times_raw = np.fromfile(base / manifest["times_file"], dtype="<f4") \
        if (base / manifest["times_file"]).exists() else None
    if times_raw is None:
        raise DataError(f"times array file {base / manifest['times_file']} does not exist")
    times = times_raw.astype(np.int64)
    if not np.array_equal(times_raw.astype(np.float64), times):
        raise DataError("times must hold integer day indices")
    l = times.size

    y = _read_f32(base / manifest["y_file"], "Y", k * l).reshape(k, l)
    m = _read_f32(base / manifest["m_file"], "M", k * l).reshape(k, l)

    if d:
        if "x_file" not in manifest:
            raise DataError("manifest names features but has no x_file")
        x = _read_f32(base / manifest["x_file"], "X", k * l * d).reshape(k, l, d)
        if manifest.get("z_file"):
            z = _read_f32(base / manifest["z_file"], "Z", k * l * d).reshape(k, l, d)
        else:
            z = np.zeros((k, l, d))
    else:
        x = np.zeros((k, l, 0))
        z = np.zeros((k, l, 0))

    landcover = None
    if manifest.get("landcover_file"):
        landcover = _read_f32(base / manifest["landcover_file"], "landcover", k)

    # Non-finite covariates count as missing; fill and flag.
    bad = ~np.isfinite(x)
    z[bad] = 1.0
    x[z == 1.0] = 0.0
    y[m == 0.0] = 0.0

    for cat in manifest.get("categorical_features", []):
        x, z, feature_names = _expand_categorical(x, z, feature_names, cat)

    dataset = GridDataset(
        height=height,
        width=width,
        times=times,
        Y=y,
        M=m,
        X=x,
        Z=z,
        coords=grid_coords(height, width),
        cell_size_km=float(manifest["cell_size_km"]),
        feature_names=feature_names,
        landcover=landcover,
        epoch=manifest.get("epoch"),
    )
    dataset.validate()
    return dataset


def _expand_categorical(x, z, names, cat_name):
    """Replace an integer-coded feature column with one-hot columns."""
    if cat_name not in names:
        raise DataError(f"categorical feature {cat_name!r} not in feature_names")
    j = names.index(cat_name)
    col, col_z = x[:, :, j], z[:, :, j]
    observed = col[col_z == 0.0]
    cats = np.unique(observed.astype(np.int64)) if observed.size else np.array([], dtype=np.int64)
    if observed.size and not np.array_equal(observed, observed.astype(np.int64)):
        raise DataError(f"categorical feature {cat_name!r} holds non-integer values")
    onehot = np.zeros(col.shape + (len(cats),))
    for idx, c in enumerate(cats):
        onehot[:, :, idx] = ((col == c) & (col_z == 0.0)).astype(float)
    new_z = np.repeat(col_z[:, :, None], len(cats), axis=2)
    x = np.concatenate([x[:, :, :j], onehot, x[:, :, j + 1:]], axis=2)
    z = np.concatenate([z[:, :, :j], new_z, z[:, :, j + 1:]], axis=2)
    names = names[:j] + [f"{cat_name}={c}" for c in cats] + names[j + 1:]
    return x, z, names


def save_dataset(dataset: GridDataset, manifest_path):
    """Write the dataset as a manifest plus float32 array files.

    Round trips exactly through load_dataset when array values are float32
    representable (true for everything this package generates or loads).
    """
    dataset.validate()
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    base.mkdir(parents=True, exist_ok=True)
    stem = manifest_path.stem

    manifest = {
        "format_version": FORMAT_VERSION,
        "height": dataset.height,
        "width": dataset.width,
        "cell_size_km": dataset.cell_size_km,
        "times_file": f"{stem}.times.f32",
        "y_file": f"{stem}.y.f32",
        "m_file": f"{stem}.m.f32",
        "feature_names": dataset.feature_names,
        "categorical_features": [],
    }
    _write_f32(base / manifest["times_file"], dataset.times)
    _write_f32(base / manifest["y_file"], dataset.Y.reshape(-1))
    _write_f32(base / manifest["m_file"], dataset.M.reshape(-1))
    if dataset.n_features:
        manifest["x_file"] = f"{stem}.x.f32"
        manifest["z_file"] = f"{stem}.z.f32"
        _write_f32(base / manifest["x_file"], dataset.X.reshape(-1))
        _write_f32(base / manifest["z_file"], dataset.Z.reshape(-1))
    if dataset.landcover is not None:
        manifest["landcover_file"] = f"{stem}.landcover.f32"
        _write_f32(base / manifest["landcover_file"], dataset.landcover)
    if dataset.epoch is not None:
        manifest["epoch"] = dataset.epoch
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")


def augment_missing_indicators(dataset: GridDataset) -> GridDataset:
    """Append the covariate missingness mask as extra features: [X; Z].

    Doubles the feature count; the new columns are named after their source
    with a "_missing" suffix and are exempt from standardization.
    """
    if dataset.n_base_features != dataset.n_features:
        raise ContractError("covariates already carry missing indicators")
    x = np.concatenate([dataset.X, dataset.Z], axis=2)
    z = np.concatenate([dataset.Z, np.zeros_like(dataset.Z)], axis=2)
    names = dataset.feature_names + [n + MISSING_SUFFIX for n in dataset.feature_names]
    out = replace(dataset, X=x, Z=z, feature_names=names)
    out.n_base_features = dataset.n_base_features
    return out


def normalize(
    dataset: GridDataset, stats: Optional[NormalizationStats] = None
) -> tuple[GridDataset, NormalizationStats]:
    """Standardize the target and base covariates to zero mean, unit variance.

    Statistics come from observed entries only (M = 1 for Y, Z = 0 per
    feature); pass ``stats`` to reuse a training fit on held-out data.
    Indicator features appended by augment_missing_indicators keep their raw
    0/1 values, and covariate cells with Z = 1 are re-zeroed afterwards so the
    fill value sits at the feature mean.

    Returns a new dataset; the input is untouched.
    """
    d = dataset.n_features
    if stats is None:
        observed = dataset.Y[dataset.M == 1.0]
        if observed.size == 0:
            raise DataError("cannot fit normalization: no observed target entries")
        y_mean = float(observed.mean())
        y_std = float(observed.std())
        x_mean = np.zeros(d)
        x_std = np.ones(d)
        for j in range(dataset.n_base_features):
            vals = dataset.X[:, :, j][dataset.Z[:, :, j] == 0.0]
            if vals.size:
                x_mean[j] = vals.mean()
                x_std[j] = vals.std()
        degenerate = [
            dataset.feature_names[j]
            for j in range(dataset.n_base_features)
            if x_std[j] == 0.0
        ]
        if y_std == 0.0:
            degenerate.insert(0, "Y")
            y_std = 1.0
        if degenerate:
            warnings.warn(
                f"zero variance in {', '.join(degenerate)}; stddev clamped to 1",
                stacklevel=2,
            )
        x_std[x_std == 0.0] = 1.0
        stats = NormalizationStats(y_mean=y_mean, y_std=y_std, x_mean=x_mean, x_std=x_std)
    elif stats.x_mean.shape != (d,):
        raise DataError(
            f"normalization stats cover {stats.x_mean.shape[0]} features, dataset has {d}"
        )

    y = stats.normalize_y(dataset.Y)
    y[dataset.M == 0.0] = 0.0
    x = (dataset.X - stats.x_mean) / stats.x_std
    x[dataset.Z == 1.0] = 0.0
    return replace_preserving(dataset, Y=y, X=x), stats


def replace_preserving(dataset: GridDataset, **changes) -> GridDataset:
    """dataclasses.replace that keeps the augmented-feature bookkeeping."""
    out = replace(dataset, **changes)
    out.n_base_features = dataset.n_base_features
    return out
