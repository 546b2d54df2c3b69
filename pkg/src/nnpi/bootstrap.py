"""Baseline prediction intervals from a bootstrap ensemble of point regressors.

B one-output networks are trained on resamples of the training data; the
ensemble mean and variance plus an estimated noise variance yield Gaussian
intervals: mean +/- z * sqrt(model_var + noise_var).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

import numpy as np

from . import network
from .errors import ConfigError
from .network import IntervalBatch, MLPConfig, MLPParams
from .optimizers import GDConfig, _descend


def gaussian_quantile(p: float) -> float:
    """Standard normal quantile (two-sided: pass (1 + confidence) / 2)."""
    return NormalDist().inv_cdf(p)


@dataclass
class BootstrapEnsemble:
    """B trained point regressors plus the estimated irreducible noise variance."""

    members: list[MLPParams]
    noise_var: float

    def __post_init__(self) -> None:
        if len(self.members) < 2:
            raise ConfigError("ensemble needs at least 2 members")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")

    @property
    def b(self) -> int:
        return len(self.members)


def _derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _fit_point_regressor(params: MLPParams, X: np.ndarray, y: np.ndarray,
                         cfg: GDConfig) -> MLPParams:
    """Mini-batch descent on mean squared error."""

    def batch_grad(p: MLPParams, Xb: np.ndarray, yb: np.ndarray):
        pred = network.forward(p, Xb)
        resid = pred - yb
        loss = float(np.mean(resid**2))
        return loss, network.backward(p, Xb, 2.0 * resid / resid.shape[0])

    def epoch_eval(p: MLPParams, epoch: int) -> float:
        pred = network.forward(p, X)
        return float(np.mean((pred - y) ** 2))

    return _descend(params.clone(), X, y, cfg, batch_grad, epoch_eval)


def ensemble_forward(ens: BootstrapEnsemble, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ensemble mean and unbiased (B-1 divisor) model variance."""
    preds = np.stack([network.forward(m, X) for m in ens.members])
    return preds.mean(axis=0), preds.var(axis=0, ddof=1)


def bootstrap_train(X: np.ndarray, y: np.ndarray, b: int, net_cfg: MLPConfig,
                    gd_cfg: GDConfig, seed: int,
                    label_range: tuple[float, float] | None = None) -> BootstrapEnsemble:
    """Train B members on n-sized resamples with replacement (member-seeded).

    The noise variance is estimated on the training data as
    max(0, mean squared residual of the ensemble mean - mean model variance).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("bootstrap needs at least 2 rows")
    if b < 2:
        raise ConfigError("b must be >= 2")
    if net_cfg.output_dim != 1:
        raise ConfigError("bootstrap members are one-output point regressors")
    if label_range is None:
        label_range = (float(np.min(y)), float(np.max(y)))

    members = []
    for i in range(b):
        resample_rng = np.random.default_rng(np.random.SeedSequence([seed, 19, i]))
        idx = resample_rng.integers(0, n, size=n)
        p0 = network.init(net_cfg, _derive_seed(seed, 23, i), label_range)
        member_cfg = GDConfig(gd_cfg.learning_rate, gd_cfg.decay, gd_cfg.batch_size,
                              gd_cfg.max_epochs, gd_cfg.grad_tol, gd_cfg.clip_norm,
                              seed=_derive_seed(seed, 31, i))
        members.append(_fit_point_regressor(p0, X[idx], y[idx], member_cfg))

    ens = BootstrapEnsemble(members, 0.0)
    mean, model_var = ensemble_forward(ens, X)
    noise = max(0.0, float(np.mean((y - mean) ** 2)) - float(model_var.mean()))
    ens.noise_var = noise
    return ens


def bootstrap_pi(ens: BootstrapEnsemble, X: np.ndarray, confidence: float) -> IntervalBatch:
    """Symmetric Gaussian intervals around the ensemble mean."""
    if not 0 < confidence < 1:
        raise ConfigError("confidence must lie in (0, 1)")
    mean, model_var = ensemble_forward(ens, X)
    z = gaussian_quantile(0.5 * (1.0 + confidence))
    half = z * np.sqrt(model_var + ens.noise_var)
    return IntervalBatch(mean - half, mean + half)


ENSEMBLE_VERSION = 1


def save_ensemble(path: str | Path, ens: BootstrapEnsemble, meta: dict | None = None) -> None:
    """Bundle checkpoint: every member's architecture + flat parameters + noise_var."""
    members = []
    for m in ens.members:
        cfg = m.config()
        members.append({
            "config": {
                "input_dim": cfg.input_dim,
                "hidden_layers": list(cfg.hidden_layers),
                "hidden_activation": cfg.hidden_activation,
                "output_dim": cfg.output_dim,
            },
            "flat_params": [float(v) for v in network.flatten(m)],
        })
    payload = {
        "format_version": ENSEMBLE_VERSION,
        "kind": "bootstrap_ensemble",
        "noise_var": float(ens.noise_var),
        "members": members,
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_ensemble(path: str | Path) -> tuple[BootstrapEnsemble, dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("kind") != "bootstrap_ensemble":
        raise ConfigError(f"{path}: not a bootstrap ensemble checkpoint")
    members = []
    for entry in payload["members"]:
        c = entry["config"]
        cfg = MLPConfig(c["input_dim"], tuple(c["hidden_layers"]),
                        c["hidden_activation"], c["output_dim"])
        members.append(network.unflatten(cfg, np.array(entry["flat_params"])))
    return BootstrapEnsemble(members, payload["noise_var"]), payload.get("meta", {})
