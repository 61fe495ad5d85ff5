"""Dense layers with hand-derived gradients, MSE loss, AdamW and one-cycle LR.

All tensors are 2-D numpy arrays ("Tensor2"); float64 is the reference mode
used by gradient checks, float32 is acceptable for training throughput.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalError


@dataclass
class LinearParams:
    """Affine layer parameters: W has shape (in, out), b has shape (out,)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.ndim != 1 \
                or self.b.shape[0] != self.W.shape[1]:
            raise DataError("LinearParams shapes inconsistent")

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    def n_params(self) -> int:
        return self.W.size + self.b.size


def init_params(shape: tuple[int, int], seed: int) -> LinearParams:
    """Glorot-uniform weights, zero bias, deterministic per seed."""
    fan_in, fan_out = shape
    if fan_in <= 0 or fan_out <= 0:
        raise ConfigError(f"layer dims must be positive, got {shape}")
    rng = np.random.default_rng(seed)
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return LinearParams(W=w, b=np.zeros(fan_out))


def linear_forward(x: np.ndarray, p: LinearParams) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != p.in_dim:
        raise DataError(
            f"linear input has {x.shape} but layer expects cols={p.in_dim}")
    return x @ p.W + p.b


def linear_backward(x: np.ndarray, p: LinearParams, grad_out: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(grad_out * (xW + b)) w.r.t. x, W, b."""
    if grad_out.shape != (x.shape[0], p.out_dim):
        raise DataError("grad_out shape mismatch in linear_backward")
    grad_x = grad_out @ p.W.T
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def mse_loss(pred: np.ndarray, target: np.ndarray
             ) -> tuple[float, np.ndarray]:
    """Mean over all entries of squared error, with gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise DataError(
            f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad


@dataclass
class AdamWState:
    """Per-parameter first/second moments plus shared hyperparameters.

    The learning rate is passed to adamw_step per call (scheduled outside).
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, params: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            elif self.m[name].shape != p.shape:
                raise DataError(f"moment shape mismatch for '{name}'")


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState, lr: float) -> None:
    """One AdamW update, in place: bias-corrected moments, decoupled decay."""
    state.ensure(params)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in block '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                   + state.weight_decay * p)


@dataclass(frozen=True)
class OneCycleSchedule:
    """Cosine warmup from max_lr/div_factor to max_lr over the warmup span,
    then cosine decay down to max_lr/final_div_factor."""

    max_lr: float
    total_steps: int
    warmup_fraction: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ConfigError("max_lr must be positive")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if not 0 < self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in (0, 1)")
        if self.div_factor <= 1 or self.final_div_factor <= 1:
            raise ConfigError("div factors must exceed 1")

    @property
    def warmup_steps(self) -> int:
        return max(1, int(round(self.warmup_fraction * self.total_steps)))


def onecycle_lr(step: int, s: OneCycleSchedule) -> float:
    if not 0 <= step <= s.total_steps:
        raise ConfigError(
            f"step {step} outside schedule range [0, {s.total_steps}]")
    lo = s.max_lr / s.div_factor
    floor = s.max_lr / s.final_div_factor
    w = s.warmup_steps
    if step <= w:
        frac = step / w
        return lo + (s.max_lr - lo) * 0.5 * (1.0 - math.cos(math.pi * frac))
    frac = (step - w) / (s.total_steps - w)
    return floor + (s.max_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * frac))
