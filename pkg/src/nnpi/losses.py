"""Training objectives for interval networks.

Two losses are provided: a width/coverage product evaluated black-box for the
genetic trainer (loss_lube), and a differentiable soft variant (loss_soft)
whose coverage term replaces the 0/1 capture step with a sigmoid product and
whose width term averages only captured samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .metrics import mpiw, picp
from .network import IntervalBatch


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic sigmoid, overflow-safe for large |x|."""
    x = np.asarray(x, dtype=float)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


@dataclass
class LossLConfig:
    """Width x exponential-coverage-penalty loss.

    eta amplifies small coverage shortfalls; mu is the target confidence.
    In train mode the step factor gamma is fixed at 1; in test mode gamma is 0
    once PICP >= mu and 1 otherwise.
    """

    eta: float
    mu: float
    mode: str = "train"

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ConfigError("eta must be > 0")
        if not 0 < self.mu < 1:
            raise ConfigError("mu must lie in (0, 1)")
        if self.mode not in ("train", "test"):
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass
class LossSConfig:
    """Soft coverage loss: MPIW_captured + lam * eta/(alpha(1-alpha)) * penalty.

    The penalty is max(0, (1-alpha) - PICP_soft)^2 by default (hinge before the
    square); literal_hinge=True switches to max(0, (1-alpha) - PICP_soft^2) for
    comparison. soften sets the sigmoid sharpness; eta conventionally equals
    the mini-batch size.
    """

    lam: float
    eta: float
    alpha: float
    soften: float
    literal_hinge: bool = False

    def __post_init__(self) -> None:
        if self.lam <= 0 or self.eta <= 0 or self.soften <= 0:
            raise ConfigError("lam, eta and soften must be > 0")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")

    @property
    def confidence(self) -> float:
        return 1.0 - self.alpha

    @property
    def penalty_coeff(self) -> float:
        return self.lam * self.eta / (self.alpha * (1.0 - self.alpha))


@dataclass
class CaptureMask:
    """0/1 indicator of samples falling inside their interval."""

    k: np.ndarray

    def __post_init__(self) -> None:
        self.k = np.asarray(self.k, dtype=float)

    @property
    def count(self) -> int:
        return int(self.k.sum())

    @property
    def empty(self) -> bool:
        return self.count == 0


def capture_mask(y: np.ndarray, iv: IntervalBatch) -> CaptureMask:
    y = np.asarray(y, dtype=float)
    return CaptureMask(((iv.lower <= y) & (y <= iv.upper)).astype(float))


def loss_lube(y: np.ndarray, iv: IntervalBatch, cfg: LossLConfig, target_range: float) -> float:
    """(MPIW/R) * (1 + gamma * exp(-eta * (PICP - mu))). Empty batches raise."""
    if target_range <= 0:
        raise ValueError("target_range must be positive")
    p = picp(y, iv)
    w = mpiw(iv)
    if cfg.mode == "train":
        gamma = 1.0
    else:
        gamma = 0.0 if p >= cfg.mu else 1.0
    return (w / target_range) * (1.0 + gamma * np.exp(-cfg.eta * (p - cfg.mu)))


def picp_soft(y: np.ndarray, iv: IntervalBatch, soften: float) -> float:
    """Sigmoid-softened coverage: mean_i sigma(s(y-L)) * sigma(s(U-y))."""
    y = np.asarray(y, dtype=float)
    a = sigmoid(soften * (y - iv.lower))
    b = sigmoid(soften * (iv.upper - y))
    return float(np.mean(a * b))


def mpiw_captured(y: np.ndarray, iv: IntervalBatch) -> tuple[float, CaptureMask]:
    """Mean width over captured samples only: sum k_i (U_i - L_i) / sum k_j.

    With nothing captured the width is defined as 0 and the returned mask's
    ``empty`` flag is set; the coverage penalty then dominates training.
    """
    mask = capture_mask(y, iv)
    if mask.empty:
        return 0.0, mask
    return float(np.sum(mask.k * (iv.upper - iv.lower)) / mask.count), mask


def _captured_width(iv: IntervalBatch, mask: CaptureMask) -> float:
    if mask.empty:
        return 0.0
    return float(np.sum(mask.k * (iv.upper - iv.lower)) / mask.count)


def loss_soft(y: np.ndarray, iv: IntervalBatch, cfg: LossSConfig,
              mask: CaptureMask | None = None) -> float:
    """Captured width plus the squared-hinge coverage penalty.

    ``mask`` pins the capture indicator (used by finite-difference checks and
    by the gradient, which treats k as a constant of the batch).
    """
    y = np.asarray(y, dtype=float)
    if mask is None:
        mask = capture_mask(y, iv)
    width = _captured_width(iv, mask)
    p = picp_soft(y, iv, cfg.soften)
    target = 1.0 - cfg.alpha
    if cfg.literal_hinge:
        penalty = max(0.0, target - p**2)
    else:
        penalty = max(0.0, target - p) ** 2
    return width + cfg.penalty_coeff * penalty


def loss_soft_grad(y: np.ndarray, iv: IntervalBatch, cfg: LossSConfig,
                   mask: CaptureMask | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Exact partials of loss_soft w.r.t. each lower/upper bound.

    The capture mask inside the width term is frozen for the batch
    (stop-gradient); the sigmoids in the soft coverage propagate normally.
    """
    y = np.asarray(y, dtype=float)
    if mask is None:
        mask = capture_mask(y, iv)
    n = iv.n
    grad_lower = np.zeros(n)
    grad_upper = np.zeros(n)
    if not mask.empty:
        grad_upper += mask.k / mask.count
        grad_lower -= mask.k / mask.count

    a = sigmoid(cfg.soften * (y - iv.lower))
    b = sigmoid(cfg.soften * (iv.upper - y))
    p = float(np.mean(a * b))
    target = 1.0 - cfg.alpha
    if cfg.literal_hinge:
        dpen_dp = -2.0 * p * cfg.penalty_coeff if target - p**2 > 0 else 0.0
    else:
        short = target - p
        dpen_dp = -2.0 * cfg.penalty_coeff * short if short > 0 else 0.0
    if dpen_dp != 0.0:
        dp_dlower = -(cfg.soften / n) * a * (1.0 - a) * b
        dp_dupper = (cfg.soften / n) * a * b * (1.0 - b)
        grad_lower += dpen_dp * dp_dlower
        grad_upper += dpen_dp * dp_dupper
    return grad_lower, grad_upper
