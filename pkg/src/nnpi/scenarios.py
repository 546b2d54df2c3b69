"""Deployment scenarios: one generalized model for the population, one
personalized model per subject, or a hybrid with one model per k-means cluster
of subjects, all evaluated under k-fold cross-validation.

Every scenario re-fits min-max normalization on each training split and
applies it to the matching test split. Fold construction shares one seed
derivation across scenarios so their splits coincide, which makes the
degenerate cases line up exactly: hybrid with k=1 equals generalized, and
personalized on a single-subject dataset equals generalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import network
from .bootstrap import bootstrap_pi, bootstrap_train
from .data import (DEFAULT_LEVELS, Dataset, NormParams, SubjectProfile,
                   kfold_indices, minmax_normalize, subject_profiles)
from .errors import ConfigError, DataWarning
from .losses import LossLConfig, LossSConfig, mpiw_captured, picp_soft
from .metrics import PIQuality, format_table, per_level_bounds, pi_quality
from .network import IntervalBatch, MLPConfig, MLPParams
from .optimizers import GAConfig, GDConfig, TrainHistory, ga_train, gd_train

DEFAULT_CONFIDENCES = (0.50, 0.75, 0.85, 0.95)
GROUP_ALL = "all"

METHODS = ("loss_s", "loss_l", "bootstrap")
SCENARIOS = ("generalized", "personalized", "hybrid")


def derive_seed(*keys: int) -> int:
    """Deterministic, well-mixed child seed from integer key paths."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


@dataclass
class RunSettings:
    """Hyperparameters shared by the scenario runners.

    eta_s defaults to the effective mini-batch size; mu_s / mu_l default to the
    evaluation confidence level of each run.
    """

    hidden_layers: tuple[int, ...] = (16, 16)
    activation: str = "relu"
    folds: int = 10
    seed: int = 0
    jobs: int = 1
    levels: tuple[float, ...] = DEFAULT_LEVELS
    # gradient descent (grad_tol=0 disables the full-batch stopping check,
    # which roughly halves epoch cost; set it > 0 to stop on a flat gradient)
    learning_rate: float = 0.02
    decay: float = 1e-5
    batch_size: int = 150
    epochs: int = 300
    grad_tol: float = 0.0
    clip_norm: float = 2.0
    # soft loss (eta_s=None falls back to the effective mini-batch size)
    lam: float = 5.0
    eta_s: float | None = 35.0
    soften: float = 25.0
    mu_s: float | None = None
    literal_hinge: bool = False
    init_delta: float = 1.0
    # genetic algorithm / black-box interval loss
    ga_population: int = 12
    ga_parents: int = 6
    ga_genes_pct: float = 15.0
    ga_generations: int = 200
    ga_tournament: int = 3
    ga_elitism: int = 1
    mutation_scale: float = 0.1
    eta_l: float = 50.0
    mu_l: float | None = None
    # bootstrap baseline
    bootstrap_members: int = 20


@dataclass
class JobArtifact:
    """Everything a CLI run needs to persist one training job."""

    scenario: str
    method: str
    fold: int
    group: str
    confidence: float | None
    params: object
    norm: NormParams
    test_idx: np.ndarray
    quality: dict
    history: TrainHistory | None


@dataclass
class ScenarioReport:
    """Per-confidence quality plus per-level mean bounds (and per-cluster
    detail for hybrid runs)."""

    scenario: str
    method: str
    confidences: list[float]
    quality: dict
    level_bounds: dict
    per_fold: dict
    cluster_sizes: list[int] | None = None
    per_cluster: dict | None = None
    fold_counts: dict = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    seed: int = 0
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "method": self.method,
            "confidences": list(self.confidences),
            "seed": self.seed,
            "quality": [
                {"confidence": c, "picp": q.picp, "mpiw": q.mpiw, "nmpiw": q.nmpiw,
                 "crossing_rate": q.crossing_rate}
                for c, q in ((c, self.quality[c]) for c in self.confidences)
            ],
            "level_bounds": [
                {"confidence": c, "rows": [list(r) for r in self.level_bounds[c]]}
                for c in self.confidences
            ],
            "per_fold": [
                {"confidence": c, "fold": f, "group": g, "picp": q.picp,
                 "mpiw": q.mpiw, "nmpiw": q.nmpiw, "crossing_rate": q.crossing_rate}
                for c in self.confidences for (f, g, q) in self.per_fold[c]
            ],
            "cluster_sizes": self.cluster_sizes,
            "per_cluster": None if self.per_cluster is None else [
                {"cluster": int(cl), "confidence": c, "picp": q.picp, "mpiw": q.mpiw,
                 "nmpiw": q.nmpiw, "crossing_rate": q.crossing_rate}
                for cl in sorted(self.per_cluster) for c, q in
                ((c, self.per_cluster[cl][c]) for c in self.confidences)
            ],
            "fold_counts": dict(self.fold_counts),
            "skipped": list(self.skipped),
            "notes": dict(self.notes),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ScenarioReport":
        confs = [float(c) for c in payload["confidences"]]
        quality = {row["confidence"]: PIQuality(row["picp"], row["mpiw"], row["nmpiw"],
                                                row["crossing_rate"])
                   for row in payload["quality"]}
        level_bounds = {entry["confidence"]: [tuple(r) for r in entry["rows"]]
                        for entry in payload["level_bounds"]}
        per_fold: dict = {c: [] for c in confs}
        for row in payload["per_fold"]:
            per_fold[row["confidence"]].append(
                (row["fold"], row["group"],
                 PIQuality(row["picp"], row["mpiw"], row["nmpiw"], row["crossing_rate"])))
        per_cluster = None
        if payload.get("per_cluster") is not None:
            per_cluster = {}
            for row in payload["per_cluster"]:
                per_cluster.setdefault(row["cluster"], {})[row["confidence"]] = PIQuality(
                    row["picp"], row["mpiw"], row["nmpiw"], row["crossing_rate"])
        return cls(payload["scenario"], payload["method"], confs, quality, level_bounds,
                   per_fold, payload.get("cluster_sizes"), per_cluster,
                   payload.get("fold_counts", {}), payload.get("skipped", []),
                   payload.get("seed", 0), payload.get("notes", {}))

    def write_tables(self, outdir: str | Path) -> None:
        """Delimiter-separated tables mirroring the report structure."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        rows = [(f"{c:.2f}", self.quality[c].picp, self.quality[c].mpiw,
                 self.quality[c].nmpiw, self.quality[c].crossing_rate)
                for c in self.confidences]
        (outdir / "quality.csv").write_text(
            format_table(["confidence", "picp", "mpiw", "nmpiw", "crossing_rate"], rows))

        header = ["level"]
        for c in self.confidences:
            tag = f"{int(round(c * 100))}"
            header += [f"lower_{tag}", f"upper_{tag}"]
        level_rows = []
        levels = [r[0] for r in self.level_bounds[self.confidences[0]]]
        for li, level in enumerate(levels):
            row: list = [f"{level:g}"]
            for c in self.confidences:
                row += [self.level_bounds[c][li][1], self.level_bounds[c][li][2]]
            level_rows.append(tuple(row))
        (outdir / "level_bounds.csv").write_text(format_table(header, level_rows))

        fold_rows = [(f"{c:.2f}", f, g, q.picp, q.mpiw, q.nmpiw, q.crossing_rate)
                     for c in self.confidences for (f, g, q) in self.per_fold[c]]
        (outdir / "per_fold.csv").write_text(
            format_table(["confidence", "fold", "group", "picp", "mpiw", "nmpiw",
                          "crossing_rate"], fold_rows))

        if self.per_cluster is not None:
            cl_rows = []
            for cl in sorted(self.per_cluster):
                size = (self.cluster_sizes[cl]
                        if self.cluster_sizes and cl < len(self.cluster_sizes) else -1)
                for c in self.confidences:
                    q = self.per_cluster[cl][c]
                    cl_rows.append((cl, size, f"{c:.2f}", q.picp, q.mpiw, q.nmpiw,
                                    q.crossing_rate))
            (outdir / "clusters.csv").write_text(
                format_table(["cluster", "size", "confidence", "picp", "mpiw", "nmpiw",
                              "crossing_rate"], cl_rows))


@dataclass
class ClusterModel:
    """k-means result over subject profiles with nearest-centroid routing."""

    centroids: np.ndarray
    assignments: dict
    subject_order: list
    models: dict | None = None
    inertia_history: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def route(self, profile_vector: np.ndarray) -> int:
        """Nearest centroid by Euclidean distance; ties go to the lowest index."""
        d = np.linalg.norm(self.centroids - np.asarray(profile_vector, dtype=float), axis=1)
        return int(np.argmin(d))

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for c in self.assignments.values():
            counts[c] += 1
        return counts


def kmeans(profiles, k: int, seed: int, max_iter: int = 100) -> ClusterModel:
    """Lloyd's iteration with k-means++ seeding on profile vectors.

    Nearest-centroid ties break to the lowest cluster index; an empty cluster
    is reseeded to the point farthest from its assigned centroid; iteration
    stops when assignments are stable or at max_iter.
    """
    if isinstance(profiles, (list, tuple)) and profiles and isinstance(profiles[0], SubjectProfile):
        ids = [p.subject_id for p in profiles]
        X = np.stack([p.values for p in profiles])
    else:
        X = np.asarray(profiles, dtype=float)
        ids = list(range(X.shape[0]))
    m = X.shape[0]
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k > m:
        raise ConfigError(f"k={k} exceeds the {m} available profiles")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 37]))
    centroids = [X[int(rng.integers(m))]]
    for _ in range(k - 1):
        d2 = np.min(np.stack([np.sum((X - c) ** 2, axis=1) for c in centroids]), axis=0)
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=d2 / total))
        else:
            nxt = int(rng.integers(m))
        centroids.append(X[nxt])
    centroids = np.array(centroids, dtype=float)

    assign = None
    inertia_history: list[float] = []
    for _ in range(max_iter):
        d2 = np.stack([np.sum((X - c) ** 2, axis=1) for c in centroids], axis=1)
        new_assign = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new_assign == c):
                dist_own = d2[np.arange(m), new_assign]
                far = int(np.argmax(dist_own))
                centroids[c] = X[far]
                new_assign[far] = c
                d2 = np.stack([np.sum((X - cc) ** 2, axis=1) for cc in centroids], axis=1)
        inertia_history.append(float(np.sum(d2[np.arange(m), new_assign])))
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        for c in range(k):
            centroids[c] = X[assign == c].mean(axis=0)

    return ClusterModel(centroids, {ids[i]: int(assign[i]) for i in range(m)},
                        list(ids), None, inertia_history)


def _mean_quality(qs: list[PIQuality]) -> PIQuality:
    return PIQuality(float(np.mean([q.picp for q in qs])),
                     float(np.mean([q.mpiw for q in qs])),
                     float(np.mean([q.nmpiw for q in qs])),
                     float(np.mean([q.crossing_rate for q in qs])))


def _check_method(method: str) -> None:
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")


def _check_confidences(confidences) -> list[float]:
    confs = sorted(float(c) for c in confidences)
    if not confs:
        raise ConfigError("need at least one confidence level")
    for c in confs:
        if not 0 < c < 1:
            raise ConfigError(f"confidence {c} must lie in (0, 1)")
    return confs


def _net_config(settings: RunSettings, d: int, output_dim: int) -> MLPConfig:
    return MLPConfig(d, settings.hidden_layers, settings.activation, output_dim)


def _interval_job(spec):
    """Train one interval model on a normalized split and predict its test rows."""
    method, Xtr, ytr, Xte, yte, conf, settings, seed, target_range, key = spec
    label_range = (float(ytr.min()), float(ytr.max()))
    net_cfg = _net_config(settings, Xtr.shape[1], 2)
    batch_eff = min(settings.batch_size, ytr.shape[0])
    if method == "loss_s":
        params0 = network.init(net_cfg, derive_seed(seed, 1), label_range,
                               settings.init_delta)
        mu = settings.mu_s if settings.mu_s is not None else conf
        loss_cfg = LossSConfig(settings.lam,
                               settings.eta_s if settings.eta_s is not None else float(batch_eff),
                               1.0 - mu, settings.soften, settings.literal_hinge)
        gd_cfg = GDConfig(settings.learning_rate, settings.decay, batch_eff,
                          settings.epochs, settings.grad_tol, settings.clip_norm,
                          derive_seed(seed, 2))
        trained, hist = gd_train(params0, Xtr, ytr, loss_cfg, gd_cfg,
                                 target_range=target_range)
    else:
        loss_cfg = LossLConfig(settings.eta_l,
                               settings.mu_l if settings.mu_l is not None else conf,
                               "train")
        ga_cfg = GAConfig(settings.ga_population, settings.ga_parents,
                          settings.ga_genes_pct, settings.ga_generations,
                          settings.ga_tournament, settings.ga_elitism,
                          settings.mutation_scale, derive_seed(seed, 2))
        trained, hist = ga_train(net_cfg, Xtr, ytr, loss_cfg, ga_cfg,
                                 target_range=target_range, label_range=label_range)
    iv = network.forward(trained, Xte)
    return key, iv.lower, iv.upper, pi_quality(yte, iv, target_range), trained, hist


def _bootstrap_job(spec):
    """Train one bootstrap ensemble per split; intervals for every confidence."""
    Xtr, ytr, Xte, yte, confs, settings, seed, target_range, key = spec
    net_cfg = _net_config(settings, Xtr.shape[1], 1)
    batch_eff = min(settings.batch_size, ytr.shape[0])
    gd_cfg = GDConfig(settings.learning_rate, settings.decay, batch_eff,
                      settings.epochs, settings.grad_tol, settings.clip_norm, 0)
    ens = bootstrap_train(Xtr, ytr, settings.bootstrap_members, net_cfg, gd_cfg, seed)
    out = {}
    for conf in confs:
        iv = bootstrap_pi(ens, Xte, conf)
        out[conf] = (iv.lower, iv.upper, pi_quality(yte, iv, target_range))
    return key, out, ens


def _run_jobs(fn, specs, jobs: int):
    if jobs <= 1:
        return [fn(s) for s in specs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, specs))


def _pooled_level_rows(ds: Dataset, lower: np.ndarray, upper: np.ndarray,
                       filled: np.ndarray, levels) -> list:
    iv = IntervalBatch(lower[filled], upper[filled])
    return per_level_bounds(ds.labels[filled], iv, levels)


class _Pool:
    """Accumulates pooled test predictions per confidence level."""

    def __init__(self, n: int, confs: list[float]):
        self.lower = {c: np.full(n, np.nan) for c in confs}
        self.upper = {c: np.full(n, np.nan) for c in confs}
        self.filled = {c: np.zeros(n, dtype=bool) for c in confs}

    def add(self, conf: float, idx: np.ndarray, lower: np.ndarray, upper: np.ndarray):
        self.lower[conf][idx] = lower
        self.upper[conf][idx] = upper
        self.filled[conf][idx] = True


def run_generalized(ds: Dataset, method: str = "loss_s",
                    settings: RunSettings | None = None,
                    confidences=DEFAULT_CONFIDENCES,
                    return_artifacts: bool = False):
    """One population model per fold: train on 90%, evaluate on the held-out 10%
    (for the default ten folds), metrics averaged over folds per confidence.
    """
    settings = settings or RunSettings()
    _check_method(method)
    confs = _check_confidences(confidences)
    target_range = ds.label_range
    splits = kfold_indices(ds.n, settings.folds, derive_seed(settings.seed, 11))

    fold_inputs = []
    for f, (tr, te) in enumerate(splits):
        norm = NormParams.fit(ds.features[tr])
        fold_inputs.append((norm.apply(ds.features[tr]), ds.labels[tr],
                            norm.apply(ds.features[te]), ds.labels[te], norm, tr, te))

    cells = {c: [] for c in confs}
    pool = _Pool(ds.n, confs)
    artifacts: list[JobArtifact] = []

    if method == "bootstrap":
        specs = [(Xtr, ytr, Xte, yte, confs, settings,
                  derive_seed(settings.seed, 13, 0, f, 0), target_range, f)
                 for f, (Xtr, ytr, Xte, yte, _, _, _) in enumerate(fold_inputs)]
        for f, (key, per_conf, ens) in enumerate(_run_jobs(_bootstrap_job, specs,
                                                           settings.jobs)):
            _, _, _, _, norm, tr, te = fold_inputs[f]
            for c in confs:
                lower, upper, q = per_conf[c]
                cells[c].append((f, GROUP_ALL, q))
                pool.add(c, te, lower, upper)
            if return_artifacts:
                artifacts.append(JobArtifact("generalized", method, f, GROUP_ALL, None,
                                             ens, norm, te,
                                             {c: per_conf[c][2] for c in confs}, None))
    else:
        specs = []
        for ci, conf in enumerate(confs):
            for f, (Xtr, ytr, Xte, yte, _, _, _) in enumerate(fold_inputs):
                specs.append((method, Xtr, ytr, Xte, yte, conf, settings,
                              derive_seed(settings.seed, 13, ci, f, 0), target_range,
                              (ci, f)))
        results = _run_jobs(_interval_job, specs, settings.jobs)
        for (key, lower, upper, q, params, hist) in results:
            ci, f = key
            conf = confs[ci]
            _, _, _, _, norm, tr, te = fold_inputs[f]
            cells[conf].append((f, GROUP_ALL, q))
            pool.add(conf, te, lower, upper)
            if return_artifacts:
                artifacts.append(JobArtifact("generalized", method, f, GROUP_ALL, conf,
                                             params, norm, te, {conf: q}, hist))

    quality = {c: _mean_quality([q for (_, _, q) in cells[c]]) for c in confs}
    level_bounds = {c: _pooled_level_rows(ds, pool.lower[c], pool.upper[c],
                                          pool.filled[c], settings.levels)
                    for c in confs}
    report = ScenarioReport("generalized", method, confs, quality, level_bounds,
                            cells, fold_counts={GROUP_ALL: settings.folds},
                            seed=settings.seed)
    return (report, artifacts) if return_artifacts else report


def run_personalized(ds: Dataset, method: str = "loss_s",
                     settings: RunSettings | None = None,
                     confidences=DEFAULT_CONFIDENCES,
                     return_artifacts: bool = False):
    """One model per subject, each under its own CV on the subject's rows.

    A subject's fold count shrinks to its row count when data is scarce
    (recorded in the report); subjects with fewer than 2 rows are skipped with
    a warning. Metrics are averaged within each subject, then across subjects.
    """
    settings = settings or RunSettings()
    _check_method(method)
    confs = _check_confidences(confidences)
    target_range = ds.label_range
    fold_seed = derive_seed(settings.seed, 11)

    subjects = ds.subjects()
    cells = {c: [] for c in confs}
    subject_cells: dict = {}
    pool = _Pool(ds.n, confs)
    artifacts: list[JobArtifact] = []
    fold_counts: dict = {}
    skipped: list[str] = []

    usable = []
    for s_idx, sid in enumerate(subjects):
        rows = np.flatnonzero(ds.subject_ids == sid)
        if rows.size < 2:
            warnings.warn(f"subject {sid!r} has {rows.size} row(s); skipped from "
                          "personalized run", DataWarning, stacklevel=2)
            skipped.append(str(sid))
            continue
        usable.append((s_idx, sid, rows))
    if not usable:
        raise ConfigError("no subject has enough rows for a personalized run")

    for s_idx, sid, rows in usable:
        k_s = min(settings.folds, rows.size)
        fold_counts[str(sid)] = k_s
        splits = kfold_indices(rows.size, k_s, fold_seed)
        for f, (tr_local, te_local) in enumerate(splits):
            tr, te = rows[tr_local], rows[te_local]
            norm = NormParams.fit(ds.features[tr])
            Xtr, Xte = norm.apply(ds.features[tr]), norm.apply(ds.features[te])
            ytr, yte = ds.labels[tr], ds.labels[te]
            if method == "bootstrap":
                key, per_conf, ens = _bootstrap_job(
                    (Xtr, ytr, Xte, yte, confs, settings,
                     derive_seed(settings.seed, 13, 0, f, s_idx), target_range, f))
                for c in confs:
                    lower, upper, q = per_conf[c]
                    subject_cells.setdefault((c, sid), []).append(q)
                    cells[c].append((f, str(sid), q))
                    pool.add(c, te, lower, upper)
                if return_artifacts:
                    artifacts.append(JobArtifact("personalized", method, f, str(sid),
                                                 None, ens, norm, te,
                                                 {c: per_conf[c][2] for c in confs}, None))
            else:
                for ci, conf in enumerate(confs):
                    _, lower, upper, q, params, hist = _interval_job(
                        (method, Xtr, ytr, Xte, yte, conf, settings,
                         derive_seed(settings.seed, 13, ci, f, s_idx), target_range, 0))
                    subject_cells.setdefault((conf, sid), []).append(q)
                    cells[conf].append((f, str(sid), q))
                    pool.add(conf, te, lower, upper)
                    if return_artifacts:
                        artifacts.append(JobArtifact("personalized", method, f, str(sid),
                                                     conf, params, norm, te, {conf: q},
                                                     hist))

    quality = {}
    for c in confs:
        per_subject = [_mean_quality(subject_cells[(c, sid)])
                       for (_, sid, _) in usable]
        quality[c] = _mean_quality(per_subject)
    level_bounds = {c: _pooled_level_rows(ds, pool.lower[c], pool.upper[c],
                                          pool.filled[c], settings.levels)
                    for c in confs}
    report = ScenarioReport("personalized", method, confs, quality, level_bounds,
                            cells, fold_counts=fold_counts, skipped=skipped,
                            seed=settings.seed)
    return (report, artifacts) if return_artifacts else report


def _fold_profiles(features: np.ndarray, labels: np.ndarray, subject_ids: np.ndarray,
                   levels) -> list[SubjectProfile]:
    """Subject profiles from an already-normalized row subset; missing-level
    imputation warnings are routine here and therefore silenced."""
    view = Dataset(features, labels, subject_ids)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        return subject_profiles(view, levels=levels, match="nearest")


def run_hybrid(ds: Dataset, k: int = 4, method: str = "loss_s",
               settings: RunSettings | None = None,
               confidences=DEFAULT_CONFIDENCES,
               return_artifacts: bool = False):
    """Cluster subjects on their profiles, then train one model per cluster.

    Folds are shared with the generalized scenario. Within each fold,
    clustering uses training-split subjects only; test rows of subjects unseen
    in the training split are routed to the nearest centroid via their own
    profile. Reported cluster sizes come from a clustering of the full dataset
    (the deployment artifact; see fit_clusters).
    """
    settings = settings or RunSettings()
    _check_method(method)
    confs = _check_confidences(confidences)
    if k < 1:
        raise ConfigError("k must be >= 1")
    target_range = ds.label_range
    splits = kfold_indices(ds.n, settings.folds, derive_seed(settings.seed, 11))

    full_model = fit_clusters(ds, k, derive_seed(settings.seed, 18),
                              levels=settings.levels)
    cluster_sizes = full_model.sizes()

    cells = {c: [] for c in confs}
    cluster_cells: dict = {}
    pool = _Pool(ds.n, confs)
    artifacts: list[JobArtifact] = []
    usable_folds = {c_idx: 0 for c_idx in range(k)}
    skipped: list[str] = []

    for f, (tr, te) in enumerate(splits):
        norm = NormParams.fit(ds.features[tr])
        Xtr_all, Xte_all = norm.apply(ds.features[tr]), norm.apply(ds.features[te])
        ytr_all, yte_all = ds.labels[tr], ds.labels[te]
        ids_tr, ids_te = ds.subject_ids[tr], ds.subject_ids[te]

        profiles = _fold_profiles(Xtr_all, ytr_all, ids_tr, settings.levels)
        if len(profiles) < k:
            raise ConfigError(f"fold {f} has {len(profiles)} training subjects, "
                              f"fewer than k={k}")
        km = kmeans(profiles, k, derive_seed(settings.seed, 17, f))

        # Route every test row: training-split subjects keep their cluster,
        # unseen subjects go to the nearest centroid via their test profile.
        te_cluster = np.empty(te.shape[0], dtype=int)
        known = km.assignments
        unseen = [sid for sid in np.unique(ids_te) if sid not in known]
        route = dict(known)
        if unseen:
            unseen_mask = np.isin(ids_te, unseen)
            for p in _fold_profiles(Xte_all[unseen_mask], yte_all[unseen_mask],
                                    ids_te[unseen_mask], settings.levels):
                route[p.subject_id] = km.route(p.values)
        for i, sid in enumerate(ids_te):
            te_cluster[i] = route[sid]
        tr_cluster = np.array([known[sid] for sid in ids_tr])

        for cl in range(k):
            tr_mask = tr_cluster == cl
            te_mask = te_cluster == cl
            if tr_mask.sum() < 2:
                warnings.warn(f"fold {f} cluster {cl} has {int(tr_mask.sum())} training "
                              "row(s); cell skipped", DataWarning, stacklevel=2)
                skipped.append(f"fold{f}/cluster{cl}")
                continue
            if te_mask.sum() == 0:
                skipped.append(f"fold{f}/cluster{cl}:no-test-rows")
                continue
            usable_folds[cl] += 1
            Xtr, ytr = Xtr_all[tr_mask], ytr_all[tr_mask]
            Xte, yte = Xte_all[te_mask], yte_all[te_mask]
            te_idx = te[te_mask]
            group = f"cluster{cl}"
            if method == "bootstrap":
                _, per_conf, ens = _bootstrap_job(
                    (Xtr, ytr, Xte, yte, confs, settings,
                     derive_seed(settings.seed, 13, 0, f, cl), target_range, 0))
                for c in confs:
                    lower, upper, q = per_conf[c]
                    cluster_cells.setdefault((c, cl), []).append(q)
                    cells[c].append((f, group, q))
                    pool.add(c, te_idx, lower, upper)
                if return_artifacts:
                    artifacts.append(JobArtifact("hybrid", method, f, group, None, ens,
                                                 norm, te_idx,
                                                 {c: per_conf[c][2] for c in confs}, None))
            else:
                for ci, conf in enumerate(confs):
                    _, lower, upper, q, params, hist = _interval_job(
                        (method, Xtr, ytr, Xte, yte, conf, settings,
                         derive_seed(settings.seed, 13, ci, f, cl), target_range, 0))
                    cluster_cells.setdefault((conf, cl), []).append(q)
                    cells[conf].append((f, group, q))
                    pool.add(conf, te_idx, lower, upper)
                    if return_artifacts:
                        artifacts.append(JobArtifact("hybrid", method, f, group, conf,
                                                     params, norm, te_idx, {conf: q},
                                                     hist))

    per_cluster = {}
    for cl in range(k):
        per_cluster[cl] = {}
        for c in confs:
            cell = cluster_cells.get((c, cl))
            per_cluster[cl][c] = (_mean_quality(cell) if cell else
                                  PIQuality(float("nan"), float("nan"), float("nan"),
                                            float("nan")))
    quality = {c: _mean_quality([per_cluster[cl][c] for cl in range(k)
                                 if cluster_cells.get((c, cl))]) for c in confs}
    level_bounds = {c: _pooled_level_rows(ds, pool.lower[c], pool.upper[c],
                                          pool.filled[c], settings.levels)
                    for c in confs}
    report = ScenarioReport("hybrid", method, confs, quality, level_bounds, cells,
                            cluster_sizes=cluster_sizes, per_cluster=per_cluster,
                            fold_counts={f"cluster{cl}": usable_folds[cl]
                                         for cl in range(k)},
                            skipped=skipped, seed=settings.seed)
    return (report, artifacts) if return_artifacts else report


def fit_clusters(ds: Dataset, k: int, seed: int, levels=DEFAULT_LEVELS) -> ClusterModel:
    """Deployment clustering on the full dataset: normalize, profile, k-means."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        ds_norm, _ = minmax_normalize(ds)
        profiles = subject_profiles(ds_norm, levels=levels, match="nearest")
    return kmeans(profiles, k, seed)


@dataclass
class SearchSpace:
    """Named hyperparameter ranges: ("int", lo, hi), ("float", lo, hi) or
    ("choice", options)."""

    params: dict

    def sample(self, rng: np.random.Generator) -> dict:
        out = {}
        for name, spec in self.params.items():
            kind = spec[0]
            if kind == "int":
                out[name] = int(rng.integers(spec[1], spec[2] + 1))
            elif kind == "float":
                out[name] = float(rng.uniform(spec[1], spec[2]))
            elif kind == "choice":
                out[name] = spec[1][int(rng.integers(len(spec[1])))]
            else:
                raise ConfigError(f"unknown range kind {kind!r}")
        return out

    def contains(self, cfg: dict) -> bool:
        for name, value in cfg.items():
            spec = self.params.get(name)
            if spec is None:
                return False
            if spec[0] == "choice":
                if value not in spec[1]:
                    return False
            elif not spec[1] <= value <= spec[2]:
                return False
        return True

    @classmethod
    def network_space(cls) -> "SearchSpace":
        return cls({
            "n_hidden_layers": ("int", 1, 4),
            "hidden_width": ("int", 10, 150),
            "activation": ("choice", ("relu", "tanh", "linear")),
        })

    @classmethod
    def ga_space(cls) -> "SearchSpace":
        return cls({
            "population": ("int", 10, 20),
            "parents_mating": ("int", 5, 10),
            "genes_mutated_pct": ("float", 10.0, 20.0),
            "eta": ("float", 25.0, 100.0),
            "mu": ("float", 0.5, 0.95),
        })

    @classmethod
    def gd_space(cls) -> "SearchSpace":
        return cls({
            "learning_rate": ("float", 0.001, 0.1),
            "decay": ("float", 1e-6, 1e-4),
            "lam": ("float", 5.0, 30.0),
            "eta": ("float", 35.0, 240.0),
            "mu": ("float", 0.5, 0.95),
            "soften": ("float", 10.0, 220.0),
        })

    @classmethod
    def for_method(cls, method: str) -> "SearchSpace":
        base = dict(cls.network_space().params)
        if method == "loss_l":
            base.update(cls.ga_space().params)
        elif method == "loss_s":
            base.update(cls.gd_space().params)
        else:  # bootstrap: network plus descent ranges
            base.update({"learning_rate": ("float", 0.001, 0.1),
                         "decay": ("float", 1e-6, 1e-4)})
        return cls(base)


def apply_search_config(settings: RunSettings, cfg: dict, method: str) -> RunSettings:
    """Fold a sampled search point into a copy of the run settings."""
    updates: dict = {}
    if "n_hidden_layers" in cfg or "hidden_width" in cfg:
        n_layers = int(cfg.get("n_hidden_layers", len(settings.hidden_layers)))
        width = int(cfg.get("hidden_width", settings.hidden_layers[0]))
        updates["hidden_layers"] = (width,) * n_layers
    if "activation" in cfg:
        updates["activation"] = cfg["activation"]
    if "learning_rate" in cfg:
        updates["learning_rate"] = cfg["learning_rate"]
    if "decay" in cfg:
        updates["decay"] = cfg["decay"]
    if method == "loss_s":
        if "lam" in cfg:
            updates["lam"] = cfg["lam"]
        if "eta" in cfg:
            updates["eta_s"] = cfg["eta"]
        if "mu" in cfg:
            updates["mu_s"] = cfg["mu"]
        if "soften" in cfg:
            updates["soften"] = cfg["soften"]
    elif method == "loss_l":
        if "population" in cfg:
            updates["ga_population"] = cfg["population"]
        if "parents_mating" in cfg:
            updates["ga_parents"] = cfg["parents_mating"]
        if "genes_mutated_pct" in cfg:
            updates["ga_genes_pct"] = cfg["genes_mutated_pct"]
        if "eta" in cfg:
            updates["eta_l"] = cfg["eta"]
        if "mu" in cfg:
            updates["mu_l"] = cfg["mu"]
    return replace(settings, **updates)


def tune(space: SearchSpace, budget: int, objective, seed: int):
    """Seeded random search with a lexicographic objective.

    objective(config) must return (coverage_shortfall, width); candidates are
    compared as tuples so shortfall dominates and width breaks ties. Returns
    the best configuration and the full trial log.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 41]))
    best_cfg = None
    best_score = None
    trials = []
    for t in range(budget):
        cfg = space.sample(rng)
        score = tuple(float(v) for v in objective(cfg))
        trials.append({"trial": t, "config": cfg, "shortfall": score[0],
                       "width": score[1]})
        if best_score is None or score < best_score:
            best_score = score
            best_cfg = cfg
    return best_cfg, trials


def make_scenario_objective(ds: Dataset, method: str, settings: RunSettings,
                            confidence: float):
    """Objective for tune(): train on fold 0's training split, score the
    held-out split by (coverage shortfall, width)."""
    _check_method(method)
    splits = kfold_indices(ds.n, settings.folds, derive_seed(settings.seed, 11))
    tr, te = splits[0]
    norm = NormParams.fit(ds.features[tr])
    Xtr, Xte = norm.apply(ds.features[tr]), norm.apply(ds.features[te])
    ytr, yte = ds.labels[tr], ds.labels[te]
    target_range = ds.label_range
    job_seed = derive_seed(settings.seed, 41, 1)

    def objective(cfg: dict):
        s2 = apply_search_config(settings, cfg, method)
        if method == "bootstrap":
            _, per_conf, _ = _bootstrap_job((Xtr, ytr, Xte, yte, [confidence], s2,
                                             job_seed, target_range, 0))
            q = per_conf[confidence][2]
        else:
            _, _, _, q, _, _ = _interval_job((method, Xtr, ytr, Xte, yte, confidence,
                                              s2, job_seed, target_range, 0))
        return max(0.0, confidence - q.picp), q.mpiw

    return objective


def softening_sweep(ds: Dataset, s_values, lam_values,
                    settings: RunSettings | None = None,
                    confidence: float = 0.85) -> list[dict]:
    """Train the soft loss over an (s, lambda) grid on fold 0 and record the
    achieved soft metrics on the held-out split (plus hard PICP/MPIW)."""
    settings = settings or RunSettings()
    if not s_values or not lam_values:
        raise ConfigError("s_values and lam_values must be non-empty")
    splits = kfold_indices(ds.n, settings.folds, derive_seed(settings.seed, 11))
    tr, te = splits[0]
    norm = NormParams.fit(ds.features[tr])
    Xtr, Xte = norm.apply(ds.features[tr]), norm.apply(ds.features[te])
    ytr, yte = ds.labels[tr], ds.labels[te]
    target_range = ds.label_range

    rows = []
    for si, s in enumerate(s_values):
        for lj, lam in enumerate(lam_values):
            s2 = replace(settings, soften=float(s), lam=float(lam))
            _, lower, upper, q, params, _ = _interval_job(
                ("loss_s", Xtr, ytr, Xte, yte, confidence, s2,
                 derive_seed(settings.seed, 43, si, lj), target_range, 0))
            iv = IntervalBatch(lower, upper)
            width_cap, _ = mpiw_captured(yte, iv)
            rows.append({"soften": float(s), "lam": float(lam),
                         "picp_soft": picp_soft(yte, iv, float(s)),
                         "mpiw_captured": width_cap,
                         "picp": q.picp, "mpiw": q.mpiw})
    return rows
