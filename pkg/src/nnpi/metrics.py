"""Hard prediction-interval quality metrics and reporting statistics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import DEFAULT_LEVELS, SubjectProfile
from .errors import DataWarning, EmptyInputError
from .network import IntervalBatch


@dataclass
class PIQuality:
    """Coverage/width summary for one model/dataset pair.

    nmpiw is NaN when no target range was supplied. crossing_rate is the
    fraction of intervals with lower > upper (diagnostic, not clamped away).
    """

    picp: float
    mpiw: float
    nmpiw: float
    crossing_rate: float


def picp(y: np.ndarray, iv: IntervalBatch) -> float:
    """Prediction Interval Coverage Probability: the fraction of targets with
    lower_i <= y_i <= upper_i. Boundary equality counts as covered.
    """
    y = np.asarray(y, dtype=float)
    if iv.n == 0 or y.shape != (iv.n,):
        raise EmptyInputError("picp needs matching non-empty targets and intervals")
    covered = (iv.lower <= y) & (y <= iv.upper)
    return float(covered.mean())


def mpiw(iv: IntervalBatch) -> float:
    """Mean Prediction Interval Width, mean(upper - lower).

    Crossed bounds contribute negative terms; they are reported, not clamped.
    """
    if iv.n == 0:
        raise EmptyInputError("mpiw needs a non-empty interval batch")
    return float(np.mean(iv.upper - iv.lower))


def nmpiw(mpiw_value: float, target_range: float) -> float:
    """Width normalized by the target range R = max(y) - min(y)."""
    if target_range <= 0:
        raise ValueError("target_range must be positive")
    return mpiw_value / target_range


def pi_quality(y: np.ndarray, iv: IntervalBatch, target_range: float | None = None) -> PIQuality:
    """Bundle PICP, MPIW, NMPIW and crossing rate for reporting."""
    w = mpiw(iv)
    norm = nmpiw(w, target_range) if target_range and target_range > 0 else float("nan")
    return PIQuality(picp(y, iv), w, norm, iv.crossing_rate)


def per_level_bounds(y: np.ndarray, iv: IntervalBatch, levels=DEFAULT_LEVELS):
    """Mean lower/upper bound per target level: rows of (level, mean_L, mean_U).

    Rows are grouped by the nearest level (exact match on integer-level data).
    Levels with no observations are omitted with a warning.
    """
    y = np.asarray(y, dtype=float)
    levels = np.asarray(levels, dtype=float)
    assigned = levels[np.argmin(np.abs(y[:, None] - levels[None, :]), axis=1)]
    rows = []
    empty = []
    for level in levels:
        sel = assigned == level
        if not sel.any():
            empty.append(float(level))
            continue
        rows.append((float(level), float(iv.lower[sel].mean()), float(iv.upper[sel].mean())))
    if empty:
        warnings.warn(f"no observations at level(s) {empty}; rows omitted",
                      DataWarning, stacklevel=2)
    return rows


@dataclass
class PairwiseStats:
    """Unordered pairwise Euclidean distances within one group of profiles."""

    distances: np.ndarray
    mean: float
    q1: float
    median: float
    q3: float
    outlier_count: int


def pairwise_distance_stats(profiles) -> PairwiseStats:
    """Distance distribution summary with the Tukey 1.5*IQR outlier rule."""
    if isinstance(profiles, (list, tuple)) and profiles and isinstance(profiles[0], SubjectProfile):
        mat = np.stack([p.values for p in profiles])
    else:
        mat = np.asarray(profiles, dtype=float)
    m = mat.shape[0]
    if m < 2:
        raise ValueError("need at least 2 profiles for pairwise distances")
    iu = np.triu_indices(m, k=1)
    diffs = mat[iu[0]] - mat[iu[1]]
    dists = np.sqrt(np.sum(diffs**2, axis=1))
    q1, med, q3 = np.percentile(dists, [25, 50, 75])
    iqr = q3 - q1
    outliers = int(np.sum((dists < q1 - 1.5 * iqr) | (dists > q3 + 1.5 * iqr)))
    return PairwiseStats(dists, float(dists.mean()), float(q1), float(med), float(q3), outliers)


def format_table(header: list[str], rows: list[tuple], precision: int = 6) -> str:
    """Delimiter-separated table text with fixed float formatting (deterministic)."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                cells.append(f"{v:.{precision}f}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
