"""Dataset ingestion, min-max normalization, CV splitting, subject profiles,
and a synthetic benchmark generator with known noise.

The on-disk format is delimiter-separated text with a header row naming a
subject column, a label column, and one or more feature columns
(``subject,label,f01,...``). Column order is free; columns are mapped by name.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataWarning, EmptyInputError, ParseError, SchemaError

DEFAULT_LEVELS = (0.0, 1.0, 2.0, 3.0, 4.0)


@dataclass
class ColumnSchema:
    """Maps header names to roles. ``features=None`` takes every remaining column."""

    subject: str = "subject"
    label: str = "label"
    features: list[str] | None = None


@dataclass
class Dataset:
    """Immutable feature matrix with continuous labels and per-row subject ids.

    Feature values are expected to live in [0, 1] once normalized; labels keep
    their original scale (0-4 intensity semantics by default).
    """

    features: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.array(self.features, dtype=float)
        self.labels = np.array(self.labels, dtype=float)
        self.subject_ids = np.array(self.subject_ids)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        n = self.features.shape[0]
        if n == 0:
            raise EmptyInputError("dataset has no rows")
        if self.labels.shape != (n,) or self.subject_ids.shape != (n,):
            raise ValueError("features, labels and subject_ids disagree on row count")
        # Read-only views: datasets are shared across parallel training jobs.
        for arr in (self.features, self.labels, self.subject_ids):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def label_range(self) -> float:
        """Span of the target, max(y) - min(y)."""
        return float(self.labels.max() - self.labels.min())

    def subjects(self) -> np.ndarray:
        """Distinct subject ids in sorted order."""
        return np.unique(self.subject_ids)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.subject_ids[idx])


@dataclass
class NormParams:
    """Per-column min/max fitted on a training split, reusable on held-out data."""

    col_min: np.ndarray
    col_max: np.ndarray

    def __post_init__(self) -> None:
        self.col_min = np.asarray(self.col_min, dtype=float)
        self.col_max = np.asarray(self.col_max, dtype=float)
        if self.col_min.shape != self.col_max.shape or self.col_min.ndim != 1:
            raise ValueError("col_min/col_max must be 1-d vectors of equal length")
        if np.any(self.col_min > self.col_max):
            raise ValueError("col_min must not exceed col_max")

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Map columns by (x - min) / (max - min); constant columns map to 0."""
        X = np.asarray(X, dtype=float)
        span = self.col_max - self.col_min
        safe = np.where(span > 0, span, 1.0)
        out = (X - self.col_min) / safe
        out[..., span == 0] = 0.0
        return out

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": 1,
            "col_min": [float(v) for v in self.col_min],
            "col_max": [float(v) for v in self.col_max],
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NormParams":
        payload = json.loads(Path(path).read_text())
        return cls(np.array(payload["col_min"]), np.array(payload["col_max"]))

    @classmethod
    def fit(cls, X: np.ndarray) -> "NormParams":
        X = np.asarray(X, dtype=float)
        return cls(X.min(axis=0), X.max(axis=0))


@dataclass
class SubjectProfile:
    """Per-subject vector of feature means at each label level.

    Entries are ordered feature-major: (feature j, level l) for j = 0..d-1 and
    l over the level grid, giving length d * n_levels (110 for 22 features and
    5 levels).
    """

    subject_id: object
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)


@dataclass
class SynthConfig:
    """Synthetic regression benchmark with a known noise process.

    Labels follow y = g_c(x) + eps where g_c is a cluster-specific shape from a
    fixed polynomial/sinusoid library and eps ~ Normal(0, sigma(x)^2).
    ``heteroscedastic`` noise uses sigma(x) = sigma + sigma_slope * x1.
    When clusters > 1, trailing feature columns get cluster-shifted bands so
    subject profiles are separable by clustering.
    """

    n: int
    d: int = 22
    subjects: int = 10
    clusters: int = 1
    noise: str = "homoscedastic"
    sigma: float = 0.3
    sigma_slope: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.n >= self.subjects >= self.clusters >= 1):
            raise ConfigError("require n >= subjects >= clusters >= 1")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.noise not in ("homoscedastic", "heteroscedastic"):
            raise ConfigError(f"unknown noise model {self.noise!r}")
        if self.sigma < 0 or self.sigma_slope < 0:
            raise ConfigError("sigma and sigma_slope must be >= 0")


def _shape_ramp(x1: np.ndarray) -> np.ndarray:
    return 4.0 * x1


def _shape_square(x1: np.ndarray) -> np.ndarray:
    return 4.0 * x1**2


def _shape_sine(x1: np.ndarray) -> np.ndarray:
    return 2.0 + 2.0 * np.sin(2.0 * np.pi * x1)


def _shape_scurve(x1: np.ndarray) -> np.ndarray:
    return 2.0 - 2.0 * np.cos(np.pi * x1)


# Cluster c uses CLUSTER_SHAPES[c % 4]; all shapes map [0,1] into [0,4].
CLUSTER_SHAPES = (_shape_ramp, _shape_square, _shape_sine, _shape_scurve)


def load_dataset(path: str | Path, schema: ColumnSchema | None = None,
                 delimiter: str = ",") -> Dataset:
    """Read a delimiter-separated feature file into a Dataset (no normalization)."""
    schema = schema or ColumnSchema()
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    if not rows:
        raise EmptyInputError(f"{path} is empty")
    header = [c.strip() for c in rows[0]]
    for required in (schema.subject, schema.label):
        if required not in header:
            raise SchemaError(f"missing column {required!r} in {path}")
    if schema.features is not None:
        missing = [c for c in schema.features if c not in header]
        if missing:
            raise SchemaError(f"missing feature column(s) {missing} in {path}")
        feature_cols = list(schema.features)
    else:
        feature_cols = [c for c in header if c not in (schema.subject, schema.label)]
    if not feature_cols:
        raise SchemaError(f"no feature columns declared in {path}")

    col_idx = {c: header.index(c) for c in header}
    data_rows = rows[1:]
    if not data_rows:
        raise EmptyInputError(f"{path} has a header but no data rows")

    subjects = []
    labels = np.empty(len(data_rows))
    feats = np.empty((len(data_rows), len(feature_cols)))
    for i, row in enumerate(data_rows):
        if len(row) != len(header):
            raise ParseError(f"data row {i}: expected {len(header)} cells, got {len(row)}")
        subjects.append(row[col_idx[schema.subject]].strip())
        try:
            labels[i] = float(row[col_idx[schema.label]])
            for j, c in enumerate(feature_cols):
                feats[i, j] = float(row[col_idx[c]])
        except ValueError as exc:
            raise ParseError(f"data row {i}: non-numeric cell ({exc})") from None
    return Dataset(feats, labels, np.array(subjects))


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write a Dataset in the feature-file format (full float precision)."""
    names = [f"f{j + 1:02d}" for j in range(ds.d)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject", "label", *names])
        for i in range(ds.n):
            writer.writerow([str(ds.subject_ids[i]), repr(float(ds.labels[i])),
                             *(repr(float(v)) for v in ds.features[i])])


def minmax_normalize(ds: Dataset) -> tuple[Dataset, NormParams]:
    """Scale each feature column into [0, 1]; labels are untouched.

    Constant columns map to all-zeros and a DataWarning is emitted so
    degenerate fixtures stay trainable.
    """
    params = NormParams.fit(ds.features)
    constant = np.flatnonzero(params.col_max == params.col_min)
    if constant.size:
        warnings.warn(f"constant feature column(s) {constant.tolist()} normalized to 0",
                      DataWarning, stacklevel=2)
    return Dataset(params.apply(ds.features), ds.labels, ds.subject_ids), params


def apply_normalization(ds: Dataset, params: NormParams) -> Dataset:
    """Apply stored NormParams (fitted on training data) to held-out data."""
    if params.col_min.shape[0] != ds.d:
        raise ValueError("NormParams dimension does not match dataset")
    return Dataset(params.apply(ds.features), ds.labels, ds.subject_ids)


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """k disjoint test folds over range(n): seeded shuffle, then round-robin deal.

    Fold sizes differ by at most one; indices are returned sorted.
    """
    if k < 2:
        raise ConfigError("k must be >= 2")
    if k > n:
        raise ConfigError(f"k={k} exceeds the {n} available rows")
    perm = np.random.default_rng(seed).permutation(n)
    folds = [np.sort(perm[i::k]) for i in range(k)]
    splits = []
    for i in range(k):
        train = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
        splits.append((train, folds[i]))
    return splits


def kfold_split(ds: Dataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Cross-validation splits over the dataset rows (see kfold_indices)."""
    return kfold_indices(ds.n, k, seed)


def subject_profiles(ds: Dataset, levels=None, match: str = "exact") -> list[SubjectProfile]:
    """Build one profile per subject: mean of each feature at each label level.

    ``match="exact"`` groups rows whose label equals the level; ``"nearest"``
    bins each row to the closest level first (identical on integer-level data).
    A subject with no rows at some level gets that level's entries imputed from
    the subject's overall feature means, with a DataWarning.
    """
    if match not in ("exact", "nearest"):
        raise ConfigError(f"unknown match mode {match!r}")
    levels = np.asarray(DEFAULT_LEVELS if levels is None else levels, dtype=float)
    n_levels = levels.shape[0]
    if match == "nearest":
        row_level = levels[np.argmin(np.abs(ds.labels[:, None] - levels[None, :]), axis=1)]
    else:
        row_level = ds.labels
    profiles = []
    for sid in ds.subjects():
        rows = ds.subject_ids == sid
        overall = ds.features[rows].mean(axis=0)
        vec = np.empty(ds.d * n_levels)
        missing = []
        for li, level in enumerate(levels):
            sel = rows & (row_level == level)
            cell = ds.features[sel].mean(axis=0) if sel.any() else overall
            if not sel.any():
                missing.append(float(level))
            vec[li::n_levels] = cell  # feature-major layout: index j*n_levels + li
        if missing:
            warnings.warn(f"subject {sid!r} has no rows at level(s) {missing}; "
                          "imputed from overall feature means", DataWarning, stacklevel=2)
        profiles.append(SubjectProfile(sid, vec))
    return profiles


def synth_components(cfg: SynthConfig) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Generate a synthetic dataset plus its noiseless targets and noise scale.

    Rows are dealt to subjects round-robin and subjects to clusters round-robin,
    so cluster membership is (row % subjects) % clusters.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 29]))
    subj_of_row = np.arange(cfg.n) % cfg.subjects
    cluster_of_subj = np.arange(cfg.subjects) % cfg.clusters
    cluster_of_row = cluster_of_subj[subj_of_row]

    X = rng.uniform(size=(cfg.n, cfg.d))
    if cfg.clusters > 1 and cfg.d >= 3:
        # Shift trailing columns into cluster-specific bands of width 0.4 so
        # profile clustering can separate the generating clusters.
        n_sig = min(4, cfg.d - 2)
        lo = 0.6 * cluster_of_row / (cfg.clusters - 1)
        for j in range(cfg.d - n_sig, cfg.d):
            X[:, j] = lo + 0.4 * X[:, j]

    g = np.empty(cfg.n)
    for c in range(cfg.clusters):
        sel = cluster_of_row == c
        g[sel] = CLUSTER_SHAPES[c % len(CLUSTER_SHAPES)](X[sel, 0])

    if cfg.noise == "heteroscedastic":
        sigma = cfg.sigma + cfg.sigma_slope * X[:, 0]
    else:
        sigma = np.full(cfg.n, cfg.sigma)
    y = g + rng.standard_normal(cfg.n) * sigma

    width = max(4, len(str(cfg.subjects - 1)))
    ids = np.array([f"s{j:0{width}d}" for j in subj_of_row])
    return Dataset(X, y, ids), g, sigma


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Generate a synthetic dataset (see synth_components for the ground truth)."""
    return synth_components(cfg)[0]
