"""Adaptive-moment optimizer with coupled or decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError


@dataclass
class OptimState:
    """Per-parameter first/second moments plus the shared step counter.

    decoupled=True applies weight decay directly to the parameters (AdamW);
    decoupled=False folds lr*decay*w into the gradient before the moment
    updates (classic L2-coupled Adam).
    """

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled: bool = True
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(
    params: dict[str, np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
    decoupled: bool = True,
) -> OptimState:
    state = OptimState(lr=lr, weight_decay=weight_decay, decoupled=decoupled)
    state.m = {k: np.zeros_like(p) for k, p in params.items()}
    state.v = {k: np.zeros_like(p) for k, p in params.items()}
    return state


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimState,
) -> None:
    """One bias-corrected moment update, in place on `params`."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in '{name}'")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if not state.decoupled and state.weight_decay != 0.0:
            g = g + state.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        if state.decoupled and state.weight_decay != 0.0:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
