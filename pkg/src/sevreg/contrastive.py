"""Pairing-set construction and the contrastive / variance objectives.

A batch of B sources becomes 2B views ordered so view i and view B+i come
from source i. All losses act on an embedding matrix Z (2B, d) and return
analytic gradients w.r.t. Z; parameter gradients come from backpropagating
those through the projector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import AugmentConfig, make_views
from .errors import DimensionError, ParameterError
from .nn import AdaptorNet, forward_batch

VAR_EPS = 1e-4  # inside the variance-regularizer square root

STRATEGIES = ("sup", "dis", "con", "coarse")

# Per-strategy defaults; the grid {0.1, 1.0, 10.0, 50.0, 100.0} is sweepable.
DEFAULT_TAU = {"sup": 1.0, "dis": 1.0, "con": 0.1, "coarse": 10.0, "simclr": 0.1}


@dataclass
class PairingSpec:
    """Positive-pair rule: sup (equal labels), dis (equal rounded labels),
    con (label distance < alpha), coarse (same side of beta)."""

    strategy: str = "coarse"
    alpha: float = 0.5
    beta: float = 1.5
    tau: float | None = None

    def resolved_tau(self) -> float:
        tau = DEFAULT_TAU[self.strategy] if self.tau is None else self.tau
        if tau <= 0:
            raise ParameterError(f"temperature must be > 0, got {tau}")
        return tau

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"unknown pairing strategy '{self.strategy}'")
        if self.alpha <= 0:
            raise ParameterError("alpha must be > 0")
        if not 1.0 <= self.beta <= 7.0:
            raise ParameterError("beta must lie in the label range [1, 7]")
        self.resolved_tau()


@dataclass
class Batch:
    """2B augmented views with tiled labels; views[i] and views[B+i] share
    source i, so labels[i] == labels[B+i]."""

    views: list[np.ndarray]
    labels: np.ndarray
    b: int

    def __post_init__(self):
        if len(self.views) != 2 * self.b or self.labels.shape != (2 * self.b,):
            raise DimensionError("batch must hold 2B views and 2B labels")


def build_batch(
    sources: list[tuple[np.ndarray, float]],
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> Batch:
    """Augment each (features, label) source twice and tile the labels."""
    firsts, seconds = [], []
    for h, _ in sources:
        v1, v2 = make_views(h, cfg, rng)
        firsts.append(v1)
        seconds.append(v2)
    labels = np.array([y for _, y in sources], dtype=float)
    return Batch(views=firsts + seconds, labels=np.tile(labels, 2), b=len(sources))


# ---------------------------------------------------------------------------
# Positive pairs
# ---------------------------------------------------------------------------


def positive_pairs(batch: Batch, spec: PairingSpec) -> list[np.ndarray]:
    """Per-anchor positive index sets P(i) over the 2B views, self excluded."""
    spec.validate()
    y = batch.labels
    if np.any(np.isnan(y)):
        raise ParameterError("pairing requires labels on every view")
    n = y.shape[0]
    if spec.strategy == "sup":
        same = y[:, None] == y[None, :]
    elif spec.strategy == "dis":
        bins = np.floor(y + 0.5)
        same = bins[:, None] == bins[None, :]
    elif spec.strategy == "con":
        same = np.abs(y[:, None] - y[None, :]) < spec.alpha
    else:  # coarse
        side = y > spec.beta
        same = side[:, None] == side[None, :]
    np.fill_diagonal(same, False)
    return [np.flatnonzero(same[i]) for i in range(n)]


def view_pairs(b: int) -> list[np.ndarray]:
    """P(i) = {k(i)}: each view's only positive is its sibling view."""
    return [np.array([(i + b) % (2 * b)]) for i in range(2 * b)]


# ---------------------------------------------------------------------------
# Losses (value + gradient w.r.t. Z)
# ---------------------------------------------------------------------------


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    skipped_anchors: int = 0


def ntxent_loss(
    z: np.ndarray, pairs: list[np.ndarray], tau: float
) -> LossResult:
    """Normalized temperature-scaled cross entropy over given positive sets.

    loss = -(1/n_active) sum_i (1/|P(i)|) sum_{p in P(i)}
           log( exp(z_i.z_p / tau) / sum_{j != i} exp(z_i.z_j / tau) )

    Anchors with empty P(i) are skipped and excluded from the average. The
    denominator uses a max-shifted log-sum-exp, so the small-tau end of the
    temperature grid cannot overflow.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")
    n = z.shape[0]
    if n < 2:
        raise ParameterError("ntxent_loss needs at least two views")
    if len(pairs) != n:
        raise DimensionError(f"{len(pairs)} positive sets for {n} embeddings")
    logits = (z @ z.T) / tau
    np.fill_diagonal(logits, -np.inf)  # exclude self from the denominator
    shift = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - shift)
    denom = expd.sum(axis=1, keepdims=True)
    log_denom = shift + np.log(denom)
    q = expd / denom  # softmax over A(i), rows sum to 1

    active = [i for i in range(n) if len(pairs[i]) > 0]
    skipped = n - len(active)
    if not active:
        return LossResult(0.0, np.zeros_like(z), skipped)

    loss = 0.0
    coeff = np.zeros((n, n))  # d loss / d logits
    inv_active = 1.0 / len(active)
    for i in active:
        p = pairs[i]
        inv_p = 1.0 / len(p)
        loss -= inv_p * float(np.sum(logits[i, p] - log_denom[i]))
        coeff[i] = q[i]
        coeff[i, p] -= inv_p
    loss *= inv_active
    coeff *= inv_active / tau
    grad = coeff @ z + coeff.T @ z  # logits[i, j] touches both z_i and z_j
    return LossResult(loss, grad, skipped)


def simclr_loss(z: np.ndarray, tau: float) -> LossResult:
    """NT-Xent with each view's sibling as the only positive."""
    n = z.shape[0]
    if n % 2 != 0:
        raise DimensionError("simclr_loss needs an even number of views")
    return ntxent_loss(z, view_pairs(n // 2), tau)


def variance_reg(
    z: np.ndarray, gamma: float, eps: float = VAR_EPS
) -> LossResult:
    """Hinge on per-dimension batch std: mean_k max(0, gamma - sqrt(var_k + eps))."""
    n, d = z.shape
    if n < 2:
        raise ParameterError("variance_reg needs at least two rows")
    mean = z.mean(axis=0)
    var = np.square(z - mean).mean(axis=0)
    std = np.sqrt(var + eps)
    margin = gamma - std
    active = margin > 0.0
    loss = float(np.sum(margin[active])) / d
    grad = np.zeros_like(z)
    if np.any(active):
        # d std_k / d z_ik = (z_ik - mean_k) / (n * std_k)
        scale = np.where(active, -1.0 / (d * n * std), 0.0)
        grad = (z - mean) * scale
    return LossResult(loss, grad)


def with_variance(
    contrast: LossResult, z: np.ndarray, gamma: float, var_weight: float
) -> LossResult:
    """Add the weighted variance hinge to a contrastive result."""
    if var_weight == 0.0:
        return contrast
    var = variance_reg(z, gamma)
    return LossResult(
        contrast.value + var_weight * var.value,
        contrast.grad + var_weight * var.grad,
        contrast.skipped_anchors,
    )


def stage2_loss(
    z: np.ndarray,
    batch: Batch,
    spec: PairingSpec,
    gamma: float,
    var_weight: float,
) -> LossResult:
    """Contrastive term for the selected pairing plus weighted variance hinge."""
    contrast = ntxent_loss(z, positive_pairs(batch, spec), spec.resolved_tau())
    return with_variance(contrast, z, gamma, var_weight)


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def project(
    net: AdaptorNet,
    view: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Embed one view with the projector; unit-norm when the net normalizes."""
    if not net.normalize_output:
        raise ParameterError("project expects a projection-mode network")
    return forward_batch(net, [view], training=training, rng=rng).out[0]
