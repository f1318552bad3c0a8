"""Self-supervised training: masked surrogate loss, Adam, cosine schedule.

Each epoch re-draws a fresh conditioning mask per sample, shuffles samples
with an epoch-derived stream, and optimizes the mean absolute error over the
cells hidden by that mask. Everything is keyed off the training seed, so two
runs with the same inputs produce bit-identical weight trajectories.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .dataio import GridDataset
from .errors import ConfigError, LossError, TrainingError
from .masking import SCENARIOS, training_mask
from .model import ModelConfig, ModelParams, forward
from .rng import Rng
from .segmentation import Sample, make_samples

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "Adam",
    "surrogate_loss",
    "cosine_lr",
    "train",
]


@dataclass
class TrainConfig:
    """Optimization settings; segmentation fields ride along so one config
    fully determines how a dataset becomes training samples."""

    batch_size: int = 16
    epochs: int = 200
    lr_max: float = 1e-3
    lr_min: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scenario: str = "mcar"
    seed: int = 0
    window_length: int = 72
    window_stride: int = 12
    tile: int = 12
    checkpoint_interval: int = 0
    grad_clip: Optional[float] = None

    def __post_init__(self):
        self.scenario = str(self.scenario).lower()
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"scenario must be one of {SCENARIOS}, got {self.scenario!r}"
            )
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.lr_min > self.lr_max:
            raise ConfigError(
                f"lr_min {self.lr_min} exceeds lr_max {self.lr_max}"
            )
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"bad training config JSON: {err}") from err
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**payload)


@dataclass
class TrainHistory:
    """One record per completed epoch."""

    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    skipped_samples: int = 0

    def append(self, loss: float, lr: float, secs: float):
        self.losses.append(loss)
        self.lrs.append(lr)
        self.seconds.append(secs)

    def __len__(self) -> int:
        return len(self.losses)


def surrogate_loss(y_hat: Tensor, y: np.ndarray, m: np.ndarray, m_cond: np.ndarray) -> Tensor:
    """Mean absolute error over cells observed in ``m`` but hidden by ``m_cond``.

    Cells outside that set enter the sum with an exact zero weight, so their
    values cannot move the result. Raises LossError when no cell qualifies.
    """
    if not (y_hat.shape == y.shape == m.shape == m_cond.shape):
        raise LossError(
            f"shape mismatch: prediction {y_hat.shape}, target {y.shape}, "
            f"masks {m.shape}/{m_cond.shape}"
        )
    weights = np.asarray(m, dtype=np.float64) - np.asarray(m_cond, dtype=np.float64)
    denom = float(weights.sum())
    if denom <= 0:
        raise LossError("no masked cells to score: every observed cell is visible")
    return ((y_hat - np.asarray(y, dtype=np.float64)).abs() * weights).sum() / denom


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Half-cosine decay from lr_max at epoch 0 to lr_min at the final epoch."""
    if not 0 <= epoch <= config.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {config.epochs}]")
    span = config.lr_max - config.lr_min
    return config.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * epoch / config.epochs))


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    Moments are stored per parameter in list order; the step counter is shared.
    A missing gradient counts as zero so untouched parameters still decay
    their moments.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.tensor.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in parameter {p.name}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.tensor.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(params, max_norm: float):
    """Scale all gradients down so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.tensor.grad is not None:
            total += float((p.tensor.grad ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.tensor.grad is not None:
                p.tensor.grad = p.tensor.grad * scale


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i : i + size]


def train(
    dataset: GridDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir=None,
    extra_arrays: Optional[dict] = None,
    log=None,
):
    """Run the full optimization loop; returns (params, history).

    ``dataset`` must already be normalized and hold the training view: M is
    the post-validation visibility mask, so validation-hidden cells are never
    seen here. ``extra_arrays`` (e.g. normalization stats) ride along in every
    checkpoint. ``log`` is an optional callable for progress lines.
    """
    samples = make_samples(
        dataset,
        length=train_config.window_length,
        stride=train_config.window_stride,
        tile=train_config.tile,
    )
    if not samples:
        raise TrainingError("dataset produced no training samples")

    out_path = Path(out_dir) if out_dir is not None else None
    log_handle = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "model_config.json").write_text(model_config.to_json())
        (out_path / "train_config.json").write_text(train_config.to_json())
        log_handle = open(out_path / "train_log.jsonl", "w")

    rng = Rng(train_config.seed)
    params = ModelParams(model_config, rng.derive("init"))
    param_list = params.parameters()
    optimizer = Adam(
        param_list, train_config.beta1, train_config.beta2, train_config.eps
    )
    history = TrainHistory()

    try:
        for epoch in range(train_config.epochs):
            started = time.perf_counter()
            lr = cosine_lr(epoch, train_config)
            epoch_rng = rng.derive("epoch", epoch)
            masked = []
            for idx, sample in enumerate(samples):
                drawn = training_mask(
                    sample, train_config.scenario, epoch_rng.derive("mask", idx)
                )
                # A draw may hide nothing (tiny tiles at low rates); such a
                # sample has no scoreable cells this epoch, so set it aside.
                if drawn is None or (drawn.M - drawn.m_cond).sum() <= 0:
                    history.skipped_samples += 1
                    continue
                masked.append(drawn)
            order = epoch_rng.derive("shuffle").permutation(len(masked))

            loss_sum = 0.0
            loss_count = 0
            for batch_ids in _batches(order, train_config.batch_size):
                losses = []
                for sid in batch_ids:
                    sample = masked[sid]
                    pred = forward(sample, params, model_config)
                    losses.append(
                        surrogate_loss(pred, sample.Y, sample.M, sample.m_cond)
                    )
                if not losses:
                    continue
                total = losses[0]
                for extra in losses[1:]:
                    total = total + extra
                batch_loss = total / float(len(losses))
                params.zero_grad()
                batch_loss.backward()
                if train_config.grad_clip is not None:
                    clip_gradients(param_list, train_config.grad_clip)
                optimizer.step(lr)
                loss_sum += batch_loss.item() * len(losses)
                loss_count += len(losses)

            if loss_count == 0:
                raise TrainingError(
                    f"epoch {epoch + 1}: every batch was skipped; "
                    "masks leave nothing to score"
                )
            epoch_loss = loss_sum / loss_count
            secs = time.perf_counter() - started
            history.append(epoch_loss, lr, secs)
            record = {
                "epoch": epoch + 1,
                "loss": epoch_loss,
                "lr": lr,
                "seconds": secs,
            }
            if log_handle is not None:
                log_handle.write(json.dumps(record) + "\n")
                log_handle.flush()
            if log is not None:
                log(record)
            if (
                out_path is not None
                and train_config.checkpoint_interval > 0
                and (epoch + 1) % train_config.checkpoint_interval == 0
            ):
                params.save(
                    out_path / f"checkpoint_{epoch + 1:04d}.ckpt", extra_arrays
                )

        if out_path is not None:
            params.save(out_path / "model.ckpt", extra_arrays)
    finally:
        if log_handle is not None:
            log_handle.close()

    return params, history
