"""Spatiotemporal transformer imputation for gridded sensor data."""

from .dataio import (
    GridDataset,
    NormalizationStats,
    augment_missing_indicators,
    load_dataset,
    normalize,
    save_dataset,
)
from .evaluation import (
    baseline_linear_interpolation,
    baseline_matrix_factorization,
    baseline_monthly_mean,
    evaluate_model,
    impute_dataset,
)
from .masking import mcar_split, mnar_split, training_mask
from .model import ModelConfig, ModelParams, forward
from .rng import Rng
from .segmentation import make_samples, reconstruct
from .synthgen import (
    BlobSpec,
    FieldSpec,
    apply_biased_mcar,
    blob_dataset,
    moving_blobs,
    synth_field,
)
from .training import TrainConfig, cosine_lr, surrogate_loss, train
from .variogram import (
    detect_range,
    empirical_semivariogram,
    location_residuals,
)

__version__ = "0.1.0"

__all__ = [
    "GridDataset",
    "NormalizationStats",
    "augment_missing_indicators",
    "load_dataset",
    "normalize",
    "save_dataset",
    "baseline_linear_interpolation",
    "baseline_matrix_factorization",
    "baseline_monthly_mean",
    "evaluate_model",
    "impute_dataset",
    "mcar_split",
    "mnar_split",
    "training_mask",
    "ModelConfig",
    "ModelParams",
    "forward",
    "Rng",
    "make_samples",
    "reconstruct",
    "BlobSpec",
    "FieldSpec",
    "apply_biased_mcar",
    "blob_dataset",
    "moving_blobs",
    "synth_field",
    "TrainConfig",
    "cosine_lr",
    "surrogate_loss",
    "train",
    "detect_range",
    "empirical_semivariogram",
    "location_residuals",
]
