"""Trainers: mini-batch gradient descent with learning-rate decay for the soft
loss, and a genetic algorithm over flat parameter vectors for the black-box
interval loss.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network
from .errors import ConfigError, NumericalError
from .losses import LossLConfig, LossSConfig, loss_lube, loss_soft, loss_soft_grad
from .metrics import PIQuality, pi_quality
from .network import MLPConfig, MLPParams


@dataclass
class GDConfig:
    """Gradient-descent settings; the step at epoch t is lr / (1 + decay * t).

    Stops at max_epochs or once the full-batch gradient 2-norm drops below
    grad_tol. Batches are reshuffled each epoch with the seeded generator.
    """

    learning_rate: float = 0.02
    decay: float = 1e-5
    batch_size: int = 100
    max_epochs: int = 150
    grad_tol: float = 1e-5
    clip_norm: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.001 <= self.learning_rate <= 0.1:
            raise ConfigError("learning_rate must lie in [0.001, 0.1]")
        if not 1e-6 <= self.decay <= 1e-4:
            raise ConfigError("decay must lie in [1e-6, 1e-4]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.grad_tol < 0:
            raise ConfigError("grad_tol must be >= 0")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0 (0 disables clipping)")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate / (1.0 + self.decay * epoch)


@dataclass
class GAConfig:
    """Genetic-algorithm settings: tournament selection, single-point
    crossover, additive Gaussian mutation on a fixed share of genes, and
    elitism carrying the top individuals over unchanged.
    """

    population: int = 12
    parents_mating: int = 6
    genes_mutated_pct: float = 15.0
    generations: int = 200
    tournament_size: int = 3
    elitism: int = 1
    mutation_scale: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ConfigError("population must be >= 2")
        if not 1 <= self.parents_mating <= self.population:
            raise ConfigError("parents_mating must lie in [1, population]")
        if not 0 < self.genes_mutated_pct <= 100:
            raise ConfigError("genes_mutated_pct must lie in (0, 100]")
        if self.generations < 1:
            raise ConfigError("generations must be >= 1")
        if self.tournament_size < 1:
            raise ConfigError("tournament_size must be >= 1")
        if not 1 <= self.elitism < self.population:
            raise ConfigError("elitism must lie in [1, population)")
        if self.mutation_scale <= 0:
            raise ConfigError("mutation_scale must be > 0")


@dataclass
class TrainRecord:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    train_quality: PIQuality | None = None
    val_quality: PIQuality | None = None


@dataclass
class TrainHistory:
    """Per-epoch (or per-generation) loss and interval quality."""

    records: list[TrainRecord] = field(default_factory=list)

    def append(self, rec: TrainRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_rows(self) -> list[tuple]:
        """(epoch, train_loss, val_loss, picp, mpiw); quality from validation
        when available, else from training."""
        rows = []
        for r in self.records:
            q = r.val_quality if r.val_quality is not None else r.train_quality
            rows.append((r.epoch, r.train_loss,
                         r.val_loss if r.val_loss is not None else float("nan"),
                         q.picp if q else float("nan"),
                         q.mpiw if q else float("nan")))
        return rows

    def write(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss", "picp", "mpiw"])
            for row in self.to_rows():
                writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def mutation_count(pct: float, n_genes: int) -> int:
    """Number of genes to perturb: round-half-up of pct% of the chromosome."""
    return min(n_genes, int(np.floor(pct / 100.0 * n_genes + 0.5)))


def gd_minimize(x0: np.ndarray, fn, cfg: GDConfig) -> tuple[np.ndarray, list[float]]:
    """Full-batch descent on a generic objective. fn(x) -> (loss, grad).

    Returns the final iterate and the loss trace (evaluated before each step).
    """
    x = np.array(x0, dtype=float)
    losses: list[float] = []
    for epoch in range(cfg.max_epochs):
        loss, grad = fn(x)
        if not np.isfinite(loss):
            raise NumericalError("objective became non-finite; reduce the learning rate")
        if float(np.linalg.norm(grad)) < cfg.grad_tol:
            break
        losses.append(float(loss))
        x = x - cfg.lr_at(epoch) * np.asarray(grad, dtype=float)
    return x, losses


def _grad_norm(grads: MLPParams) -> float:
    total = 0.0
    for W, b in zip(grads.weights, grads.biases):
        total += float(np.sum(W * W)) + float(np.sum(b * b))
    return float(np.sqrt(total))


def _apply_update(params: MLPParams, grads: MLPParams, lr: float) -> None:
    for W, b, dW, db in zip(params.weights, params.biases, grads.weights, grads.biases):
        W -= lr * dW
        b -= lr * db


def _descend(params: MLPParams, X: np.ndarray, y: np.ndarray, cfg: GDConfig,
             batch_grad, epoch_eval):
    """Shared mini-batch loop.

    batch_grad(params, Xb, yb) -> (loss, MLPParams gradients).
    epoch_eval(params, epoch) -> selection loss for best-parameter tracking
    (also free to record history). Returns the best parameters seen.
    """
    n = X.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    best_loss = np.inf
    best = params.clone()
    for epoch in range(cfg.max_epochs):
        if cfg.grad_tol > 0:  # full-batch stopping check; grad_tol=0 skips it
            _, full_grads = batch_grad(params, X, y)
            if _grad_norm(full_grads) < cfg.grad_tol:
                break
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            try:
                loss, grads = batch_grad(params, X[idx], y[idx])
            except ValueError as exc:  # non-finite forward output
                raise NumericalError(f"training diverged: {exc}; "
                                     "reduce the learning rate") from None
            if not np.isfinite(loss):
                raise NumericalError("training loss became non-finite; "
                                     "reduce the learning rate")
            if cfg.clip_norm > 0:
                # Bound the step so coverage-penalty spikes cannot throw the
                # bounds past the sigmoids' active zone (an absorbing plateau).
                norm = _grad_norm(grads)
                if norm > cfg.clip_norm:
                    scale = cfg.clip_norm / norm
                    grads = MLPParams([w * scale for w in grads.weights],
                                      [b * scale for b in grads.biases],
                                      grads.activation)
            _apply_update(params, grads, lr)
        select = epoch_eval(params, epoch)
        if select < best_loss:
            best_loss = select
            best = params.clone()
    return best


def evaluate_epoch(params: MLPParams, X: np.ndarray, y: np.ndarray, loss_cfg,
                   target_range: float | None = None) -> tuple[float, PIQuality]:
    """Pure evaluation of an interval network under either loss. No mutation."""
    iv = network.forward(params, X)
    if isinstance(loss_cfg, LossSConfig):
        loss = loss_soft(y, iv, loss_cfg)
    elif isinstance(loss_cfg, LossLConfig):
        span = target_range if target_range else float(np.max(y) - np.min(y))
        loss = loss_lube(y, iv, loss_cfg, span)
    else:
        raise ConfigError(f"unsupported loss config {type(loss_cfg).__name__}")
    return float(loss), pi_quality(y, iv, target_range)


def gd_train(params: MLPParams, X: np.ndarray, y: np.ndarray, loss_cfg: LossSConfig,
             cfg: GDConfig, X_val: np.ndarray | None = None,
             y_val: np.ndarray | None = None,
             target_range: float | None = None) -> tuple[MLPParams, TrainHistory]:
    """Train a two-output network on the soft loss with mini-batch descent.

    Returns the parameters with the best validation loss (training loss when no
    validation split is given) and the per-epoch history.
    """
    if params.output_dim != 2:
        raise ConfigError("gd_train expects a two-output interval network")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("X and y must be non-empty with matching row counts")
    if not isinstance(loss_cfg, LossSConfig):
        raise ConfigError("gd_train drives the soft loss; use ga_train for the "
                          "black-box interval loss")
    params = params.clone()
    history = TrainHistory()

    def batch_grad(p: MLPParams, Xb: np.ndarray, yb: np.ndarray):
        iv = network.forward(p, Xb)
        loss = loss_soft(yb, iv, loss_cfg)
        gl, gu = loss_soft_grad(yb, iv, loss_cfg)
        return loss, network.backward(p, Xb, gl, gu)

    def epoch_eval(p: MLPParams, epoch: int) -> float:
        train_loss, train_q = evaluate_epoch(p, X, y, loss_cfg, target_range)
        if X_val is not None:
            val_loss, val_q = evaluate_epoch(p, X_val, y_val, loss_cfg, target_range)
        else:
            val_loss, val_q = None, None
        history.append(TrainRecord(epoch, train_loss, val_loss, train_q, val_q))
        return val_loss if val_loss is not None else train_loss

    best = _descend(params, X, y, cfg, batch_grad, epoch_eval)
    return best, history


def ga_optimize(population: list[np.ndarray], fitness_fn, cfg: GAConfig,
                on_generation=None) -> tuple[np.ndarray, float, list[float]]:
    """Maximize fitness over flat vectors; returns the best individual ever.

    Each generation: tournament selection of the mating pool, single-point
    crossover at a uniform random cut, additive Gaussian mutation of a fixed
    share of genes, and elitism. Best fitness is non-decreasing by elitism.
    """
    if len(population) != cfg.population:
        raise ConfigError("population size does not match the config")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5]))
    pop = [np.array(x, dtype=float) for x in population]
    fits = np.array([float(fitness_fn(x)) for x in pop])
    best_idx = int(np.argmax(fits))
    best_x, best_f = pop[best_idx].copy(), float(fits[best_idx])
    per_gen_best: list[float] = []

    for gen in range(cfg.generations):
        order = np.argsort(-fits, kind="stable")
        elites = [pop[i].copy() for i in order[:cfg.elitism]]
        elite_fits = [float(fits[i]) for i in order[:cfg.elitism]]

        pool = []
        for _ in range(cfg.parents_mating):
            cand = rng.integers(0, cfg.population, size=cfg.tournament_size)
            pool.append(pop[cand[int(np.argmax(fits[cand]))]])

        children = []
        n_genes = pop[0].shape[0]
        n_mut = mutation_count(cfg.genes_mutated_pct, n_genes)
        for _ in range(cfg.population - cfg.elitism):
            i1, i2 = rng.integers(0, len(pool), size=2)
            if n_genes >= 2:
                cut = int(rng.integers(1, n_genes))
                child = np.concatenate([pool[i1][:cut], pool[i2][cut:]])
            else:
                child = pool[i1].copy()
            if n_mut > 0:
                where = rng.choice(n_genes, size=n_mut, replace=False)
                child[where] += rng.normal(0.0, cfg.mutation_scale, size=n_mut)
            children.append(child)

        pop = elites + children
        fits = np.array(elite_fits + [float(fitness_fn(c)) for c in children])
        gen_best = int(np.argmax(fits))
        if float(fits[gen_best]) > best_f:
            best_f = float(fits[gen_best])
            best_x = pop[gen_best].copy()
        per_gen_best.append(best_f)
        if on_generation is not None:
            on_generation(gen, best_x, best_f)
    return best_x, best_f, per_gen_best


def ga_train(net_cfg: MLPConfig, X: np.ndarray, y: np.ndarray, loss_cfg: LossLConfig,
             cfg: GAConfig, target_range: float | None = None,
             X_val: np.ndarray | None = None, y_val: np.ndarray | None = None,
             label_range: tuple[float, float] | None = None) -> tuple[MLPParams, TrainHistory]:
    """Evolve flattened network parameters against the interval loss.

    Fitness is the negated train-mode loss on the training split; the best
    individual ever seen is returned.
    """
    if net_cfg.output_dim != 2:
        raise ConfigError("ga_train expects a two-output interval network")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    span = target_range if target_range else float(np.max(y) - np.min(y))
    if span <= 0:
        raise ValueError("target range must be positive")
    if label_range is None:
        label_range = (float(np.min(y)), float(np.max(y)))
    fit_cfg = LossLConfig(loss_cfg.eta, loss_cfg.mu, "train")

    population = []
    for i in range(cfg.population):
        seed_i = int(np.random.SeedSequence([cfg.seed, 3, i]).generate_state(1)[0])
        population.append(network.flatten(network.init(net_cfg, seed_i, label_range)))

    def fitness(vec: np.ndarray) -> float:
        iv = network.forward(network.unflatten(net_cfg, vec), X)
        return -loss_lube(y, iv, fit_cfg, span)

    history = TrainHistory()

    def on_generation(gen: int, best_x: np.ndarray, best_f: float) -> None:
        p = network.unflatten(net_cfg, best_x)
        train_loss, train_q = evaluate_epoch(p, X, y, fit_cfg, span)
        if X_val is not None:
            val_loss, val_q = evaluate_epoch(p, X_val, y_val, fit_cfg, span)
        else:
            val_loss, val_q = None, None
        history.append(TrainRecord(gen, train_loss, val_loss, train_q, val_q))

    best_x, _, _ = ga_optimize(population, fitness, cfg, on_generation)
    return network.unflatten(net_cfg, best_x), history
