"""Validation splits and self-supervised training masks.

Two missingness mechanisms are simulated. MNAR hides whole time slices
(mimicking weather-driven sensor outages); MCAR hides individual entries
uniformly. Both operate only on observed cells, so the conditioning mask
never exceeds the observation mask.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError, SplitError
from .rng import Rng
from .segmentation import Sample

__all__ = [
    "MaskSplit",
    "mnar_split",
    "mcar_split",
    "training_mask",
    "save_split",
    "load_split",
    "SCENARIOS",
    "TRAINING_RATES",
]

SCENARIOS = ("mnar", "mcar")

# Candidate hiding rates drawn per training sample.
TRAINING_RATES = (0.2, 0.5, 0.8)


@dataclass
class MaskSplit:
    """A conditioning mask plus the hidden-but-observed cells it creates.

    ``m_cond`` = 1 marks entries the model may see. ``eval_points`` lists the
    (location, time) pairs with M = 1 and m_cond = 0, in row-major order.
    """

    m_cond: np.ndarray
    eval_points: list[tuple[int, int]]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_rate(p: float):
    if not 0.0 < p < 1.0:
        raise ContractError(f"hiding rate must lie strictly inside (0, 1), got {p}")


def _finish(M: np.ndarray, m_cond: np.ndarray) -> MaskSplit:
    points = np.argwhere((M == 1.0) & (m_cond == 0.0))
    return MaskSplit(m_cond=m_cond, eval_points=[(int(s), int(t)) for s, t in points])


def mnar_split(M: np.ndarray, p: float, rng: Rng) -> MaskSplit:
    """Hide a proportion p of time slices, chosen among slices with data.

    Hides round(p * n_eligible) whole time points (round half up); every
    observed entry at a hidden time becomes an evaluation point.
    """
    _check_rate(p)
    eligible = np.flatnonzero(M.sum(axis=0) >= 1)
    if eligible.size == 0:
        raise SplitError("no time point has any observation to hide")
    n_hide = _round_half_up(p * eligible.size)
    chosen = rng.choice(eligible, size=n_hide, replace=False)
    m_cond = M.copy()
    m_cond[:, chosen] = 0.0
    return _finish(M, m_cond)


def mcar_split(M: np.ndarray, p: float, rng: Rng) -> MaskSplit:
    """Hide a proportion p of observed entries uniformly without replacement."""
    _check_rate(p)
    observed = np.argwhere(M == 1.0)
    if observed.shape[0] == 0:
        raise SplitError("mask has no observed entries to hide")
    n_hide = _round_half_up(p * observed.shape[0])
    chosen = rng.choice(observed.shape[0], size=n_hide, replace=False)
    m_cond = M.copy()
    m_cond[observed[chosen, 0], observed[chosen, 1]] = 0.0
    return _finish(M, m_cond)


def training_mask(sample: Sample, scenario: str, rng: Rng) -> Optional[Sample]:
    """Re-mask a sample for self-supervision; None if nothing is visible.

    Draws a hiding rate uniformly from TRAINING_RATES, then hides that
    proportion of the sample's currently visible entries with the
    scenario-matched mechanism. The newly hidden cells (old m_cond minus new)
    are the loss targets. Samples with zero visible entries cannot supervise
    anything and are skipped.
    """
    if scenario not in SCENARIOS:
        raise ContractError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    visible = sample.m_cond
    if visible.sum() == 0:
        return None
    p = TRAINING_RATES[rng.integers(len(TRAINING_RATES))]
    split = mnar_split(visible, p, rng) if scenario == "mnar" else mcar_split(visible, p, rng)
    return sample.with_conditioning(split.m_cond)


def save_split(split: MaskSplit, path):
    """Persist the hidden cells as a JSON list of [location, time] pairs."""
    Path(path).write_text(
        json.dumps([[s, t] for s, t in split.eval_points]) + "\n"
    )


def load_split(path, M: np.ndarray) -> MaskSplit:
    """Rebuild a MaskSplit from a saved point list against the mask M."""
    try:
        pairs = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise SplitError(f"cannot read split file {path}: {err}") from err
    m_cond = M.copy()
    for pair in pairs:
        if len(pair) != 2:
            raise SplitError(f"split entries must be [location, time], got {pair!r}")
        s, t = int(pair[0]), int(pair[1])
        if not (0 <= s < M.shape[0] and 0 <= t < M.shape[1]):
            raise SplitError(f"split point ({s}, {t}) outside grid {M.shape}")
        if M[s, t] != 1.0:
            raise SplitError(f"split point ({s}, {t}) is not observed in this dataset")
        m_cond[s, t] = 0.0
    return _finish(M, m_cond)
