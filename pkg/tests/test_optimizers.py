import numpy as np
import pytest

from nnpi import (GAConfig, GDConfig, LossLConfig, LossSConfig, MLPConfig,
                  TrainHistory, evaluate_epoch, forward, ga_optimize, ga_train,
                  gd_minimize, gd_train, init, loss_lube, loss_soft, mutation_count,
                  pi_quality)
from nnpi.errors import ConfigError, NumericalError
from nnpi.optimizers import TrainRecord


def quadratic(v):
    return float(v[0] ** 2), 2.0 * v


class TestGDConfig:
    def test_table_ranges_enforced(self):
        with pytest.raises(ConfigError):
            GDConfig(learning_rate=0.5)
        with pytest.raises(ConfigError):
            GDConfig(learning_rate=0.0001)
        with pytest.raises(ConfigError):
            GDConfig(decay=1e-3)
        with pytest.raises(ConfigError):
            GDConfig(batch_size=0)

    def test_decayed_rate_strictly_decreasing(self):
        cfg = GDConfig(learning_rate=0.05, decay=1e-4)
        rates = [cfg.lr_at(t) for t in range(50)]
        assert all(a > b for a, b in zip(rates, rates[1:]))


class TestGDMinimize:
    def test_single_step_hand_value(self):
        x, _ = gd_minimize(np.array([1.0]), quadratic,
                           GDConfig(learning_rate=0.1, max_epochs=1))
        assert x[0] == pytest.approx(0.8)

    def test_zero_gradient_returns_immediately(self):
        calls = []

        def flat(v):
            calls.append(1)
            return 0.0, np.zeros_like(v)

        x, losses = gd_minimize(np.array([3.0]), flat, GDConfig(learning_rate=0.05))
        assert x[0] == 3.0 and losses == [] and len(calls) == 1

    def test_quadratic_strict_decrease(self):
        _, losses = gd_minimize(np.array([2.0]), quadratic,
                                GDConfig(learning_rate=0.05, max_epochs=40))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_converges_to_analytic_minimum(self):
        # min of (x - 1.5)^2 at 1.5
        fn = lambda v: (float((v[0] - 1.5) ** 2), 2.0 * (v - 1.5))
        x, _ = gd_minimize(np.array([-2.0]), fn,
                           GDConfig(learning_rate=0.1, decay=1e-6, max_epochs=200,
                                    grad_tol=1e-9))
        assert abs(x[0] - 1.5) < 1e-6

    def test_nonfinite_raises(self):
        fn = lambda v: (float("inf"), v)
        with pytest.raises(NumericalError):
            gd_minimize(np.array([1.0]), fn, GDConfig(learning_rate=0.1))


def small_problem(seed=0, n=80):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 2))
    y = 4 * X[:, 0] + rng.normal(0, 0.1, n)
    return X, y


class TestGDTrain:
    def test_requires_interval_network(self):
        X, y = small_problem()
        p = init(MLPConfig(2, (4,), output_dim=1), 0)
        with pytest.raises(ConfigError):
            gd_train(p, X, y, LossSConfig(5, 50, 0.15, 40), GDConfig())

    def test_deterministic(self):
        X, y = small_problem()
        cfg = GDConfig(learning_rate=0.005, batch_size=20, max_epochs=15, seed=3)
        loss_cfg = LossSConfig(5, 20, 0.15, 40)
        p0 = init(MLPConfig(2, (8,)), 1, (0, 4))
        a, _ = gd_train(p0, X, y, loss_cfg, cfg)
        b, _ = gd_train(p0, X, y, loss_cfg, cfg)
        from nnpi import flatten
        assert np.array_equal(flatten(a), flatten(b))

    def test_input_params_not_mutated(self):
        X, y = small_problem()
        p0 = init(MLPConfig(2, (8,)), 1, (0, 4))
        from nnpi import flatten
        before = flatten(p0).copy()
        gd_train(p0, X, y, LossSConfig(5, 20, 0.15, 40),
                 GDConfig(learning_rate=0.005, batch_size=20, max_epochs=5, seed=0))
        assert np.array_equal(flatten(p0), before)

    def test_history_records_quality(self):
        X, y = small_problem()
        p0 = init(MLPConfig(2, (8,)), 2, (0, 4))
        _, hist = gd_train(p0, X, y, LossSConfig(5, 20, 0.15, 40),
                           GDConfig(learning_rate=0.005, batch_size=20, max_epochs=6,
                                    seed=0), X_val=X[:10], y_val=y[:10],
                           target_range=4.0)
        assert len(hist) == 6
        rec = hist.records[0]
        assert rec.val_loss is not None and rec.train_quality.picp >= 0

    def test_history_write(self, tmp_path):
        hist = TrainHistory([TrainRecord(0, 1.0, 0.5, None, None)])
        hist.write(tmp_path / "h.csv")
        text = (tmp_path / "h.csv").read_text()
        assert text.splitlines()[0] == "epoch,train_loss,val_loss,picp,mpiw"

    def test_zero_grad_tol_runs_all_epochs(self):
        X, y = small_problem()
        p0 = init(MLPConfig(2, (6,)), 0, (0, 4))
        _, hist = gd_train(p0, X, y, LossSConfig(5, 20, 0.5, 30),
                           GDConfig(learning_rate=0.002, batch_size=40, max_epochs=4,
                                    grad_tol=0.0, seed=1))
        assert len(hist) == 4


class TestMutationCount:
    def test_round_half_up_examples(self):
        assert mutation_count(10.0, 17) == 2   # 1.7 -> 2
        assert mutation_count(10.0, 15) == 2   # 1.5 rounds up
        assert mutation_count(10.0, 14) == 1   # 1.4 -> 1
        assert mutation_count(20.0, 5) == 1

    def test_capped_at_gene_count(self):
        assert mutation_count(100.0, 7) == 7


class TestGAOptimize:
    def sphere_population(self, rng, pop, dim=10):
        return [rng.normal(0, 2, dim) for _ in range(pop)]

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            GAConfig(population=1)
        with pytest.raises(ConfigError):
            GAConfig(population=10, elitism=10)
        with pytest.raises(ConfigError):
            GAConfig(population=10, parents_mating=11)

    def test_elitism_monotone_best_fitness(self):
        rng = np.random.default_rng(0)
        cfg = GAConfig(population=12, parents_mating=6, genes_mutated_pct=15,
                       generations=50, seed=5)
        pop = self.sphere_population(rng, 12)
        _, _, per_gen = ga_optimize(pop, lambda x: -float(np.sum(x**2)), cfg)
        assert all(b >= a - 1e-15 for a, b in zip(per_gen, per_gen[1:]))

    def test_sphere_improves_median_of_five(self):
        improvements = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            pop = self.sphere_population(rng, 14)
            fitness = lambda x: -float(np.sum(x**2))
            start = max(fitness(x) for x in pop)
            cfg = GAConfig(population=14, parents_mating=7, genes_mutated_pct=15,
                           generations=50, seed=seed)
            _, best, _ = ga_optimize(pop, fitness, cfg)
            improvements.append(best - start)
        assert np.median(improvements) > 0

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        pop = self.sphere_population(rng, 10)
        cfg = GAConfig(population=10, parents_mating=5, genes_mutated_pct=10,
                       generations=20, seed=2)
        fitness = lambda x: -float(np.sum(x**2))
        a = ga_optimize([p.copy() for p in pop], fitness, cfg)
        b = ga_optimize([p.copy() for p in pop], fitness, cfg)
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]

    def test_population_size_checked(self):
        cfg = GAConfig(population=10, parents_mating=5)
        with pytest.raises(ConfigError):
            ga_optimize([np.zeros(3)] * 9, lambda x: 0.0, cfg)


class TestGATrain:
    def test_trains_interval_net_and_history(self):
        X, y = small_problem(seed=4, n=60)
        cfg_net = MLPConfig(2, (6,))
        loss_cfg = LossLConfig(eta=50.0, mu=0.85)
        ga_cfg = GAConfig(population=10, parents_mating=5, genes_mutated_pct=15,
                          generations=12, seed=0)
        params, hist = ga_train(cfg_net, X, y, loss_cfg, ga_cfg, target_range=4.0)
        assert params.output_dim == 2 and len(hist) == 12
        # best-ever fitness implies non-increasing recorded train loss
        losses = [r.train_loss for r in hist.records]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_chromosome_length_matches_network(self):
        from nnpi import param_count
        cfg_net = MLPConfig(3, (5,))
        X = np.random.default_rng(0).uniform(size=(30, 3))
        y = np.random.default_rng(1).uniform(0, 4, 30)
        seen = []

        def probe_fitness(vec):
            seen.append(vec.shape[0])
            return -float(np.sum(vec**2))

        pop = [np.zeros(param_count(cfg_net))] * 10
        ga_optimize(pop, probe_fitness,
                    GAConfig(population=10, parents_mating=5, generations=3, seed=0))
        assert set(seen) == {param_count(cfg_net)}


class TestEvaluateEpoch:
    def test_pure_and_repeatable(self):
        X, y = small_problem(seed=7)
        p = init(MLPConfig(2, (6,)), 3, (0, 4))
        cfg = LossSConfig(5, 20, 0.15, 40)
        a = evaluate_epoch(p, X, y, cfg, 4.0)
        b = evaluate_epoch(p, X, y, cfg, 4.0)
        assert a == b

    def test_perfect_coverage_recorded(self):
        X = np.random.default_rng(0).uniform(size=(20, 2))
        y = np.full(20, 2.0)
        p = init(MLPConfig(2, (4,)), 0, (0, 4))
        for W in p.weights:
            W[:] = 0.0
        p.biases[-1][:] = (0.0, 4.0)
        _, quality = evaluate_epoch(p, X, y, LossSConfig(5, 20, 0.15, 40), 4.0)
        assert quality.picp == 1.0

    def test_matches_loss_module_exactly(self):
        X, y = small_problem(seed=9)
        p = init(MLPConfig(2, (6,)), 1, (0, 4))
        scfg = LossSConfig(7, 30, 0.25, 50)
        loss, _ = evaluate_epoch(p, X, y, scfg, 4.0)
        assert loss == loss_soft(y, forward(p, X), scfg)
        lcfg = LossLConfig(eta=40.0, mu=0.75)
        loss2, _ = evaluate_epoch(p, X, y, lcfg, 4.0)
        assert loss2 == loss_lube(y, forward(p, X), lcfg, 4.0)
