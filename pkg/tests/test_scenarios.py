import json
import warnings

import numpy as np
import pytest

from nnpi import (ClusterModel, DataWarning, Dataset, RunSettings, ScenarioReport,
                  SearchSpace, SubjectProfile, SynthConfig, fit_clusters, kmeans,
                  make_scenario_objective, run_generalized, run_hybrid,
                  run_personalized, softening_sweep, subject_profiles, synth_generate,
                  tune)
from nnpi.errors import ConfigError
from nnpi.scenarios import apply_search_config

FAST = dict(hidden_layers=(10,), folds=3, learning_rate=0.003, batch_size=40,
            epochs=25, lam=5.0, soften=40.0, ga_generations=8, ga_population=10,
            ga_parents=5, bootstrap_members=3)


def fast_settings(seed=0, **over):
    kw = dict(FAST)
    kw.update(over)
    return RunSettings(seed=seed, **kw)


def small_ds(seed=0, n=120, subjects=4, clusters=1, d=4, sigma=0.15):
    return synth_generate(SynthConfig(n=n, d=d, subjects=subjects, clusters=clusters,
                                      sigma=sigma, seed=seed))


class TestKmeans:
    def test_k1_centroid_is_mean(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        model = kmeans(X, 1, seed=0)
        assert np.allclose(model.centroids[0], X.mean(axis=0))
        assert set(model.assignments.values()) == {0}

    def test_two_blobs_exact_recovery_vs_bruteforce(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0.0, 0.05, size=(6, 1))
        b = rng.normal(5.0, 0.05, size=(5, 1))
        X = np.vstack([a, b])
        model = kmeans(X, 2, seed=3)
        labels = np.array([model.assignments[i] for i in range(11)])
        assert len(set(labels[:6])) == 1 and len(set(labels[6:])) == 1
        assert labels[0] != labels[10]
        # brute-force best 2-partition by WCSS agrees with the split point
        best = None
        for cut in range(1, 11):
            wcss = (np.sum((X[:cut] - X[:cut].mean(0)) ** 2)
                    + np.sum((X[cut:] - X[cut:].mean(0)) ** 2))
            if best is None or wcss < best[0]:
                best = (wcss, cut)
        assert best[1] == 6

    def test_objective_non_increasing(self):
        X = np.random.default_rng(2).normal(size=(40, 5))
        model = kmeans(X, 4, seed=1)
        hist = model.inertia_history
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))

    def test_deterministic(self):
        X = np.random.default_rng(3).normal(size=(25, 4))
        m1, m2 = kmeans(X, 3, seed=7), kmeans(X, 3, seed=7)
        assert np.array_equal(m1.centroids, m2.centroids)
        assert m1.assignments == m2.assignments

    def test_k_exceeds_profiles(self):
        with pytest.raises(ConfigError):
            kmeans(np.zeros((3, 2)), 4, seed=0)

    def test_partition_property(self):
        X = np.random.default_rng(4).normal(size=(30, 3))
        model = kmeans(X, 5, seed=2)
        assert sorted(model.assignments.keys()) == list(range(30))
        assert all(0 <= c < 5 for c in model.assignments.values())

    def test_route_ties_break_low(self):
        model = ClusterModel(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]),
                             {}, [])
        assert model.route(np.zeros(2)) == 0

    def test_accepts_subject_profiles(self):
        profiles = [SubjectProfile("a", np.zeros(4)), SubjectProfile("b", np.ones(4)),
                    SubjectProfile("c", np.full(4, 0.1))]
        model = kmeans(profiles, 2, seed=0)
        assert set(model.assignments) == {"a", "b", "c"}
        assert model.assignments["a"] == model.assignments["c"]


class TestGeneralized:
    def test_report_structure(self):
        ds = small_ds()
        rep = run_generalized(ds, "loss_s", fast_settings(), (0.5, 0.85))
        assert rep.confidences == [0.5, 0.85]
        assert set(rep.quality) == {0.5, 0.85}
        for c in rep.confidences:
            assert len(rep.per_fold[c]) == 3
            assert 0 <= rep.quality[c].picp <= 1
        assert rep.level_bounds[0.5]

    def test_reproducible_bit_exact(self):
        ds = small_ds(seed=5)
        a = run_generalized(ds, "loss_s", fast_settings(seed=2), (0.85,))
        b = run_generalized(ds, "loss_s", fast_settings(seed=2), (0.85,))
        assert a.quality[0.85] == b.quality[0.85]
        assert a.level_bounds == b.level_bounds

    def test_zero_noise_tight_intervals(self):
        ds = small_ds(seed=1, n=300, sigma=0.0)
        settings = fast_settings(seed=0, epochs=80, batch_size=50)
        rep = run_generalized(ds, "loss_s", settings, (0.95,))
        q = rep.quality[0.95]
        assert q.picp >= 0.85
        assert q.mpiw < 1.5

    def test_bootstrap_method(self):
        ds = small_ds(seed=2)
        rep = run_generalized(ds, "bootstrap", fast_settings(epochs=40), (0.5, 0.95))
        assert rep.quality[0.95].mpiw > rep.quality[0.5].mpiw

    def test_loss_l_method(self):
        ds = small_ds(seed=3)
        rep = run_generalized(ds, "loss_l", fast_settings(), (0.85,))
        assert 0 <= rep.quality[0.85].picp <= 1

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            run_generalized(small_ds(), "mystery", fast_settings(), (0.85,))

    def test_bad_confidence(self):
        with pytest.raises(ConfigError):
            run_generalized(small_ds(), "loss_s", fast_settings(), (1.2,))


class TestPersonalized:
    def test_three_subjects_three_models(self):
        ds = small_ds(seed=4, n=90, subjects=3)
        rep = run_personalized(ds, "loss_s", fast_settings(), (0.85,))
        groups = {g for (_, g, _) in rep.per_fold[0.85]}
        assert groups == {"s0000", "s0001", "s0002"}
        assert rep.fold_counts == {"s0000": 3, "s0001": 3, "s0002": 3}

    def test_tiny_subject_skipped_with_warning(self):
        feats = np.random.default_rng(0).uniform(size=(41, 3))
        labels = np.random.default_rng(1).uniform(0, 4, 41)
        ids = np.array(["a"] * 40 + ["b"])
        ds = Dataset(feats, labels, ids)
        with pytest.warns(DataWarning):
            rep = run_personalized(ds, "loss_s", fast_settings(), (0.85,))
        assert rep.skipped == ["b"]

    def test_fold_shrink_recorded(self):
        ds = small_ds(seed=6, n=20, subjects=4)  # 5 rows per subject < 10 folds
        rep = run_personalized(ds, "loss_s", fast_settings(folds=10, batch_size=5),
                               (0.85,))
        assert all(k == 5 for k in rep.fold_counts.values())


class TestHybrid:
    def test_structure_and_sizes(self):
        ds = small_ds(seed=7, n=160, subjects=8, clusters=2, d=5)
        rep = run_hybrid(ds, 2, "loss_s", fast_settings(), (0.85,))
        assert rep.cluster_sizes is not None and sum(rep.cluster_sizes) == 8
        assert set(rep.per_cluster) == {0, 1}
        assert rep.scenario == "hybrid"

    def test_cluster_recovery_on_banded_synth(self):
        ds = small_ds(seed=8, n=400, subjects=8, clusters=2, d=5)
        model = fit_clusters(ds, 2, seed=0)
        # subjects alternate clusters by construction: s0000,s0002,... together
        groups = {}
        for sid, cl in model.assignments.items():
            groups.setdefault(cl, set()).add(sid)
        even = {f"s{i:04d}" for i in range(0, 8, 2)}
        odd = {f"s{i:04d}" for i in range(1, 8, 2)}
        assert {frozenset(g) for g in groups.values()} == {frozenset(even), frozenset(odd)}

    def test_k_must_fit_subject_count(self):
        ds = small_ds(seed=9, n=60, subjects=3)
        with pytest.raises(ConfigError):
            run_hybrid(ds, 5, "loss_s", fast_settings(), (0.85,))

    def test_routing_deterministic(self):
        ds = small_ds(seed=10, n=200, subjects=10, clusters=2, d=5)
        model = fit_clusters(ds, 2, seed=3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataWarning)
            from nnpi import minmax_normalize
            norm_ds, _ = minmax_normalize(ds)
            profiles = subject_profiles(norm_ds, match="nearest")
        for p in profiles:
            assert model.route(p.values) == model.assignments[p.subject_id]


class TestDegeneracies:
    def test_hybrid_k1_equals_generalized(self):
        ds = small_ds(seed=11, n=100, subjects=5)
        settings = fast_settings(seed=4)
        gen = run_generalized(ds, "loss_s", settings, (0.5, 0.85))
        hyb = run_hybrid(ds, 1, "loss_s", settings, (0.5, 0.85))
        for c in (0.5, 0.85):
            assert gen.quality[c] == hyb.quality[c]
            assert gen.level_bounds[c] == hyb.level_bounds[c]

    def test_single_subject_personalized_equals_generalized(self):
        ds = small_ds(seed=12, n=80, subjects=1)
        settings = fast_settings(seed=5)
        gen = run_generalized(ds, "loss_s", settings, (0.85,))
        per = run_personalized(ds, "loss_s", settings, (0.85,))
        assert gen.quality[0.85] == per.quality[0.85]
        assert gen.level_bounds[0.85] == per.level_bounds[0.85]

    def test_hybrid_k1_equals_generalized_bootstrap(self):
        ds = small_ds(seed=13, n=90, subjects=3)
        settings = fast_settings(seed=6, epochs=30)
        gen = run_generalized(ds, "bootstrap", settings, (0.85,))
        hyb = run_hybrid(ds, 1, "bootstrap", settings, (0.85,))
        assert gen.quality[0.85] == hyb.quality[0.85]


class TestReportSerialization:
    def test_roundtrip(self):
        ds = small_ds(seed=14, n=160, subjects=8, clusters=2, d=5)
        rep = run_hybrid(ds, 2, "loss_s", fast_settings(), (0.85,))
        payload = json.loads(json.dumps(rep.to_dict()))
        back = ScenarioReport.from_dict(payload)
        assert back.quality[0.85] == rep.quality[0.85]
        assert back.cluster_sizes == rep.cluster_sizes
        assert back.per_cluster[0][0.85] == rep.per_cluster[0][0.85]

    def test_write_tables(self, tmp_path):
        ds = small_ds(seed=15)
        rep = run_generalized(ds, "loss_s", fast_settings(), (0.5, 0.85))
        rep.write_tables(tmp_path)
        quality = (tmp_path / "quality.csv").read_text().splitlines()
        assert quality[0] == "confidence,picp,mpiw,nmpiw,crossing_rate"
        assert len(quality) == 3
        levels = (tmp_path / "level_bounds.csv").read_text().splitlines()
        assert levels[0].startswith("level,lower_50,upper_50,lower_85")


class TestTune:
    def test_budget_one(self):
        space = SearchSpace({"x": ("float", 0.0, 1.0)})
        best, trials = tune(space, 1, lambda cfg: (0.0, cfg["x"]), seed=0)
        assert len(trials) == 1 and best == trials[0]["config"]

    def test_lexicographic_preference(self):
        space = SearchSpace({"x": ("float", 0.0, 1.0)})
        calls = []

        def objective(cfg):
            calls.append(cfg)
            # first trial: shortfall 0.1, width 1.0; second: same shortfall, width 0.5
            return (0.1, 1.0) if len(calls) == 1 else (0.1, 0.5)

        best, trials = tune(space, 2, objective, seed=1)
        assert best == trials[1]["config"]

    def test_shortfall_dominates_width(self):
        space = SearchSpace({"x": ("float", 0.0, 1.0)})
        scores = iter([(0.2, 0.1), (0.0, 5.0)])
        best, trials = tune(space, 2, lambda cfg: next(scores), seed=2)
        # zero shortfall wins despite the much larger width
        assert best == trials[1]["config"]

    def test_samples_stay_inside_space(self):
        space = SearchSpace.ga_space()
        seen = []
        tune(space, 30, lambda cfg: (seen.append(cfg) or 0.0, 0.0), seed=3)
        for cfg in seen:
            assert space.contains(cfg)
            assert 25.0 <= cfg["eta"] <= 100.0
            assert 10 <= cfg["population"] <= 20

    def test_gd_space_ranges(self):
        space = SearchSpace.gd_space()
        rng = np.random.default_rng(0)
        for _ in range(40):
            cfg = space.sample(rng)
            assert 5.0 <= cfg["lam"] <= 30.0
            assert 10.0 <= cfg["soften"] <= 220.0
            assert 0.001 <= cfg["learning_rate"] <= 0.1

    def test_budget_validation(self):
        with pytest.raises(ConfigError):
            tune(SearchSpace({}), 0, lambda cfg: (0, 0), seed=0)

    def test_end_to_end_objective(self):
        ds = small_ds(seed=16, n=100)
        settings = fast_settings(epochs=15)
        objective = make_scenario_objective(ds, "loss_s", settings, 0.85)
        space = SearchSpace.for_method("loss_s")
        best, trials = tune(space, 2, objective, seed=4)
        assert len(trials) == 2
        assert space.contains(best)

    def test_apply_search_config(self):
        settings = fast_settings()
        cfg = {"n_hidden_layers": 2, "hidden_width": 12, "activation": "tanh",
               "learning_rate": 0.01, "lam": 9.0, "eta": 70.0, "mu": 0.9,
               "soften": 55.0, "decay": 2e-5}
        s2 = apply_search_config(settings, cfg, "loss_s")
        assert s2.hidden_layers == (12, 12) and s2.activation == "tanh"
        assert s2.eta_s == 70.0 and s2.mu_s == 0.9 and s2.lam == 9.0
        assert settings.hidden_layers == (10,)  # original untouched


class TestSofteningSweep:
    def test_grid_shape_and_echo(self):
        ds = small_ds(seed=17, n=100)
        rows = softening_sweep(ds, [20.0, 60.0], [5.0, 10.0],
                               fast_settings(epochs=15), confidence=0.85)
        assert len(rows) == 4
        assert {(r["soften"], r["lam"]) for r in rows} == {(20.0, 5.0), (20.0, 10.0),
                                                           (60.0, 5.0), (60.0, 10.0)}
        for r in rows:
            assert 0.0 <= r["picp_soft"] <= 1.0

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigError):
            softening_sweep(small_ds(), [], [5.0], fast_settings())


class TestJobsParallelism:
    def test_jobs_flag_does_not_change_results(self):
        ds = small_ds(seed=18, n=90, subjects=3)
        seq = run_generalized(ds, "loss_s", fast_settings(seed=7, jobs=1), (0.85,))
        par = run_generalized(ds, "loss_s", fast_settings(seed=7, jobs=2), (0.85,))
        assert seq.quality[0.85] == par.quality[0.85]
