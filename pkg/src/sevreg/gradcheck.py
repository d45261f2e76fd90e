"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_index: int
    n_params: int
    rtol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.rtol


def flatten_params(params: dict[str, np.ndarray]) -> np.ndarray:
    """Concatenate a named parameter dict into one flat vector."""
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unflatten_params(
    vec: np.ndarray, template: dict[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """Inverse of flatten_params, shaped after `template`."""
    out = {}
    pos = 0
    for k in sorted(template):
        size = template[k].size
        out[k] = vec[pos : pos + size].reshape(template[k].shape).copy()
        pos += size
    return out


def finite_diff_check(
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    eps: float = 1e-5,
    rtol: float = 1e-4,
) -> GradCheckReport:
    """Compare loss_fn's analytic gradient to central differences.

    loss_fn maps a flat parameter vector to (loss, gradient) and must be
    deterministic (dropout off or masks seed-fixed). Relative error per
    coordinate is |fd - an| / max(|fd|, |an|, 1e-6).
    """
    _, analytic = loss_fn(params)
    analytic = np.asarray(analytic, dtype=float)
    fd = np.empty_like(analytic)
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] += eps
        up, _ = loss_fn(bumped)
        bumped[i] -= 2.0 * eps
        down, _ = loss_fn(bumped)
        fd[i] = (up - down) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-6)
    rel = np.abs(fd - analytic) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    return GradCheckReport(
        max_rel_err=float(rel.max()) if rel.size else 0.0,
        worst_index=worst,
        n_params=int(params.size),
        rtol=rtol,
    )
