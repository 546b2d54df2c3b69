"""Feed-forward interval network: a small MLP with two linear outputs
(lower/upper bound) or one (point regressor), with reverse-mode gradients and
flat parameter views used as chromosomes by the genetic trainer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass(frozen=True)
class MLPConfig:
    """Architecture: 1-4 hidden layers, configurable activation, 1 or 2 outputs."""

    input_dim: int
    hidden_layers: tuple[int, ...] = (32, 32)
    hidden_activation: str = "relu"
    output_dim: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if not 1 <= len(self.hidden_layers) <= 4:
            raise ConfigError("hidden_layers must have 1 to 4 entries")
        if any(w < 1 for w in self.hidden_layers):
            raise ConfigError("hidden layer widths must be >= 1")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.hidden_activation!r}")
        if self.output_dim not in (1, 2):
            raise ConfigError("output_dim must be 1 or 2")

    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = (self.input_dim, *self.hidden_layers, self.output_dim)
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass
class MLPParams:
    """Per-layer weight matrices (fan_in x fan_out) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def config(self) -> MLPConfig:
        return MLPConfig(self.input_dim,
                         tuple(w.shape[1] for w in self.weights[:-1]),
                         self.activation, self.output_dim)

    def clone(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)


@dataclass
class IntervalBatch:
    """Per-row (lower, upper) bound pairs.

    upper >= lower is deliberately not enforced; crossed bounds count as
    non-covering in the coverage metric and contribute negative width. The
    crossing_rate property makes pathological training visible.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower/upper must be 1-d vectors of equal length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("interval bounds must be finite")

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def crossing_rate(self) -> float:
        return float(np.mean(self.lower > self.upper))


def param_count(cfg: MLPConfig) -> int:
    return sum(fi * fo + fo for fi, fo in cfg.layer_dims())


def init(cfg: MLPConfig, seed: int, label_range: tuple[float, float] = (0.0, 4.0),
         delta: float = 1.0) -> MLPParams:
    """Seeded initialization.

    Weights are zero-mean Gaussian with variance 2/fan_in for relu hidden
    layers and 1/fan_in otherwise. Hidden biases start at 0. For interval
    networks the output biases start at (midpoint - delta, midpoint + delta)
    of the expected label range so the initial interval is ordered and
    nonempty (a point regressor's output bias starts at the midpoint).
    """
    rng = np.random.default_rng(seed)
    dims = cfg.layer_dims()
    weights, biases = [], []
    for li, (fan_in, fan_out) in enumerate(dims):
        hidden = li < len(dims) - 1
        var = 2.0 / fan_in if (hidden and cfg.hidden_activation == "relu") else 1.0 / fan_in
        weights.append(rng.normal(0.0, np.sqrt(var), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    mid = 0.5 * (label_range[0] + label_range[1])
    if cfg.output_dim == 2:
        biases[-1][:] = (mid - delta, mid + delta)
    else:
        biases[-1][:] = mid
    return MLPParams(weights, biases, cfg.hidden_activation)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(float)  # subgradient at exactly 0 is 0
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


def _forward_cached(params: MLPParams, X: np.ndarray):
    """Forward pass keeping activations and pre-activations for backprop."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d matrix")
    if X.shape[1] != params.input_dim:
        raise ValueError(f"X has {X.shape[1]} columns, network expects {params.input_dim}")
    acts = [X]
    pres = []
    a = X
    last = len(params.weights) - 1
    for li, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        pres.append(z)
        a = _activate(z, params.activation) if li < last else z  # linear output layer
        acts.append(a)
    return acts, pres


def forward(params: MLPParams, X: np.ndarray):
    """Hidden layers apply the configured activation; the output layer is linear.

    Returns an IntervalBatch (neuron 0 = lower, neuron 1 = upper) for
    two-output networks, or a vector of point predictions for one-output ones.
    """
    out = _forward_cached(params, X)[0][-1]
    if params.output_dim == 2:
        return IntervalBatch(out[:, 0], out[:, 1])
    return out[:, 0]


def backward(params: MLPParams, X: np.ndarray, grad_lower: np.ndarray,
             grad_upper: np.ndarray | None = None) -> MLPParams:
    """Reverse-accumulate parameter gradients from per-row output gradients.

    grad_lower/grad_upper are dLoss/d(lower_i), dLoss/d(upper_i); for a
    one-output network pass the single output gradient as grad_lower and leave
    grad_upper as None. Returns gradients shaped like the parameters.
    """
    acts, pres = _forward_cached(params, X)
    n = X.shape[0]
    grad_lower = np.asarray(grad_lower, dtype=float)
    if params.output_dim == 2:
        if grad_upper is None:
            raise ValueError("two-output network needs grad_upper")
        grad_upper = np.asarray(grad_upper, dtype=float)
        if grad_lower.shape != (n,) or grad_upper.shape != (n,):
            raise ValueError("output gradients must be length-n vectors")
        delta = np.stack([grad_lower, grad_upper], axis=1)
    else:
        if grad_upper is not None:
            raise ValueError("one-output network takes a single output gradient")
        if grad_lower.shape != (n,):
            raise ValueError("output gradient must be a length-n vector")
        delta = grad_lower[:, None]

    g_w = [np.empty_like(w) for w in params.weights]
    g_b = [np.empty_like(b) for b in params.biases]
    for li in range(len(params.weights) - 1, -1, -1):
        g_w[li] = acts[li].T @ delta
        g_b[li] = delta.sum(axis=0)
        if li > 0:
            delta = (delta @ params.weights[li].T) * _activate_grad(pres[li - 1], params.activation)
    return MLPParams(g_w, g_b, params.activation)


def flatten(params: MLPParams) -> np.ndarray:
    """Layer-major, row-major flat view; weights precede biases in each layer."""
    parts = []
    for W, b in zip(params.weights, params.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(cfg: MLPConfig, vec: np.ndarray) -> MLPParams:
    """Inverse of flatten; raises on length mismatch."""
    vec = np.asarray(vec, dtype=float)
    expected = param_count(cfg)
    if vec.shape != (expected,):
        raise ValueError(f"expected a flat vector of length {expected}, got {vec.shape}")
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in cfg.layer_dims():
        weights.append(vec[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(vec[pos:pos + fan_out].copy())
        pos += fan_out
    return MLPParams(weights, biases, cfg.hidden_activation)


CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, params: MLPParams, meta: dict | None = None) -> None:
    """Versioned JSON checkpoint: architecture + flat parameter vector (+ metadata)."""
    cfg = params.config()
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "mlp",
        "config": {
            "input_dim": cfg.input_dim,
            "hidden_layers": list(cfg.hidden_layers),
            "hidden_activation": cfg.hidden_activation,
            "output_dim": cfg.output_dim,
        },
        "flat_params": [float(v) for v in flatten(params)],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_checkpoint(path: str | Path) -> tuple[MLPParams, dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != CHECKPOINT_VERSION or payload.get("kind") != "mlp":
        raise ConfigError(f"{path}: not a version-{CHECKPOINT_VERSION} mlp checkpoint")
    c = payload["config"]
    cfg = MLPConfig(c["input_dim"], tuple(c["hidden_layers"]),
                    c["hidden_activation"], c["output_dim"])
    return unflatten(cfg, np.array(payload["flat_params"])), payload.get("meta", {})
