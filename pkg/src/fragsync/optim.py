"""Inner and outer optimizers.

The inner optimizer is plain AdamW with decoupled weight decay and bias
correction, stepped once per local minibatch. The outer optimizer is SGD with
Nesterov momentum applied per fragment to the aggregated pseudo-gradient at
sync completion; the pseudo-gradient (local minus global) acts as a negative
gradient, so with momentum 0 and outer lr 1 the update degenerates to adding
the mean pseudo-gradient to the global state.

Both steps are pure state-in/state-out and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InternalError, NonFiniteError


@dataclass(frozen=True)
class OptimConfig:
    """Hyperparameters for the inner AdamW and the per-fragment outer Nesterov
    step, plus the optional warmup+cosine schedule for the inner rate."""

    inner_lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    outer_lr: float = 0.7
    outer_momentum: float = 0.9
    use_lr_schedule: bool = False
    warmup_steps: int = 100
    final_lr_frac: float = 0.1


@dataclass
class AdamWState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def fresh(cls, dim: int, **hyperparams) -> "AdamWState":
        return cls(
            first_moment=np.zeros(dim, dtype=np.float64),
            second_moment=np.zeros(dim, dtype=np.float64),
            **hyperparams,
        )


def adamw_step(
    params: np.ndarray, grad: np.ndarray, state: AdamWState
) -> tuple[np.ndarray, AdamWState]:
    """One AdamW update. Weight decay is decoupled: params are shrunk by
    ``(1 - lr * weight_decay)`` before the Adam delta is applied."""
    if grad.shape != params.shape:
        raise InternalError(f"gradient shape {grad.shape} != params {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient in adamw_step")

    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)

    new = params * (1.0 - state.lr * state.weight_decay)
    new = new - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, first_moment=m, second_moment=v, step_count=t)


@dataclass
class NesterovState:
    momentum_buffer: np.ndarray
    outer_lr: float = 0.7
    momentum: float = 0.9

    @classmethod
    def fresh(cls, dim: int, outer_lr: float = 0.7, momentum: float = 0.9) -> "NesterovState":
        return cls(np.zeros(dim, dtype=np.float64), outer_lr, momentum)


def outer_step(
    global_frag: np.ndarray, delta: np.ndarray, state: NesterovState
) -> tuple[np.ndarray, NesterovState]:
    """Nesterov SGD on a fragment's global state, treating the aggregated
    pseudo-gradient ``delta`` as a negative gradient.

    buf <- momentum * buf + g;  frag <- frag - outer_lr * (g + momentum * buf)
    with g = -delta.
    """
    if delta.shape != state.momentum_buffer.shape:
        raise InternalError(
            f"delta length {delta.shape} != momentum buffer {state.momentum_buffer.shape}"
        )
    g = -delta
    buf = state.momentum * state.momentum_buffer + g
    new = global_frag - state.outer_lr * (g + state.momentum * buf)
    return new, replace(state, momentum_buffer=buf)


def warmup_cosine_lr(
    step: int,
    base_lr: float,
    warmup_steps: int,
    total_steps: int,
    final_lr_frac: float = 0.0,
) -> float:
    """Learning rate at a given (0-based) step: linear warmup to ``base_lr``
    over ``warmup_steps``, then cosine decay to ``base_lr * final_lr_frac``."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    floor = base_lr * final_lr_frac
    span = max(total_steps - warmup_steps, 1)
    progress = min(max(step - warmup_steps, 0) / span, 1.0)
    return floor + 0.5 * (base_lr - floor) * (1.0 + math.cos(math.pi * progress))
