"""Dense-layer numerics: explicit forward/backward passes in float64.

Everything operates on plain numpy arrays (row-major, 64-bit). Sequences are
(T, D) matrices; batches of sequences are processed as one stacked matrix with
per-segment pooling, which keeps the matmuls large and the gradients exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyInputError, ParameterError

# Inside the std square root; keeps the pooling gradient finite at zero variance.
STD_EPS = 1e-8


# ---------------------------------------------------------------------------
# Layer parameters
# ---------------------------------------------------------------------------


@dataclass
class LayerParams:
    """One affine layer: weight (out, in) and bias (out,)."""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "LayerParams":
        return LayerParams(self.weight.copy(), self.bias.copy())


def init_layer(rng: np.random.Generator, n_in: int, n_out: int) -> LayerParams:
    """Uniform +-sqrt(1/fan_in) init for weight and bias."""
    bound = math.sqrt(1.0 / n_in)
    weight = rng.uniform(-bound, bound, size=(n_out, n_in))
    bias = rng.uniform(-bound, bound, size=n_out)
    return LayerParams(weight, bias)


# ---------------------------------------------------------------------------
# Elementary ops (forward + backward)
# ---------------------------------------------------------------------------


def linear_forward(params: LayerParams, x: np.ndarray) -> np.ndarray:
    """y = x @ W.T + b. x (T, in) -> (T, out)."""
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(
            f"linear expects (T, {params.in_dim}), got {x.shape}"
        )
    return x @ params.weight.T + params.bias


def linear_backward(
    params: LayerParams, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_w, grad_b, grad_x) for y = x @ W.T + b."""
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    grad_x = grad_out @ params.weight
    return grad_w, grad_b, grad_x


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient passes only where x > 0 (subgradient at 0 is 0)."""
    return grad_out * (x > 0.0)


def dropout_mask(
    shape: tuple[int, ...], p: float, rng: np.random.Generator
) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def dropout(
    x: np.ndarray, p: float, rng: np.random.Generator | None, training: bool
) -> np.ndarray:
    """Inverted dropout in training mode; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("training-mode dropout needs a seeded generator")
    return x * dropout_mask(x.shape, p, rng)


def stats_pool(h: np.ndarray) -> np.ndarray:
    """Concatenate temporal mean and std per dimension: (T, D) -> (2D,).

    Std uses the population divisor T with STD_EPS inside the square root.
    """
    if h.ndim != 2 or h.shape[0] < 1:
        raise EmptyInputError(f"stats_pool needs a (T>=1, D) matrix, got {h.shape}")
    mean = h.mean(axis=0)
    var = np.square(h - mean).mean(axis=0)
    std = np.sqrt(var + STD_EPS)
    return np.concatenate([mean, std])


def stats_pool_backward(
    h: np.ndarray, grad_out: np.ndarray
) -> np.ndarray:
    """Backward of stats_pool: grad_out (2D,) -> grad_h (T, D)."""
    t, d = h.shape
    grad_mean = grad_out[:d]
    grad_std = grad_out[d:]
    mean = h.mean(axis=0)
    var = np.square(h - mean).mean(axis=0)
    std = np.sqrt(var + STD_EPS)
    # d std_k / d h_tk = (h_tk - mean_k) / (T * std_k); the mean term cancels.
    return grad_mean / t + grad_std * (h - mean) / (t * std)


def mean_pool(h: np.ndarray) -> np.ndarray:
    """Temporal mean only: (T, D) -> (D,). Ablation alternative to stats_pool."""
    if h.ndim != 2 or h.shape[0] < 1:
        raise EmptyInputError(f"mean_pool needs a (T>=1, D) matrix, got {h.shape}")
    return h.mean(axis=0)


def mean_pool_backward(h: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    t = h.shape[0]
    return np.broadcast_to(grad_out / t, h.shape).copy()


def huber_loss(pred: float, target: float, delta: float) -> tuple[float, float]:
    """Huber value and d/dpred. Quadratic for |e| <= delta, linear beyond."""
    if delta <= 0.0:
        raise ParameterError(f"huber delta must be > 0, got {delta}")
    e = pred - target
    if abs(e) <= delta:
        return 0.5 * e * e, e
    return delta * (abs(e) - 0.5 * delta), delta * math.copysign(1.0, e)


def huber_loss_batch(
    pred: np.ndarray, target: np.ndarray, delta: float
) -> tuple[float, np.ndarray]:
    """Mean Huber loss over a batch and gradient w.r.t. pred."""
    if delta <= 0.0:
        raise ParameterError(f"huber delta must be > 0, got {delta}")
    e = pred - target
    quad = np.abs(e) <= delta
    values = np.where(quad, 0.5 * e * e, delta * (np.abs(e) - 0.5 * delta))
    grads = np.where(quad, e, delta * np.sign(e))
    n = e.shape[0]
    return float(values.mean()), grads / n


# ---------------------------------------------------------------------------
# Adaptor network
# ---------------------------------------------------------------------------

TRUNK_LAYERS = ("adaptor1", "adaptor2")
HEAD_LAYER = "head"


@dataclass
class AdaptorNet:
    """Two linear layers -> ReLU/dropout -> statistics pooling -> linear head.

    out_dim=1 gives the severity regressor; out_dim=embed size with
    normalize_output=True gives the contrastive projector. The trunk is shared
    so projector weights can seed the regressor.
    """

    layers: dict[str, LayerParams]
    feat_dim: int
    hidden_dim: int = 320
    out_dim: int = 1
    dropout_p: float = 0.1
    pool: str = "mean_std"
    normalize_output: bool = False
    feature_norm: str = "l2"

    @property
    def pooled_dim(self) -> int:
        return 2 * self.hidden_dim if self.pool == "mean_std" else self.hidden_dim

    def param_arrays(self) -> dict[str, np.ndarray]:
        """Live views of all parameters, keyed 'layer.weight' / 'layer.bias'."""
        out = {}
        for name, lp in self.layers.items():
            out[f"{name}.weight"] = lp.weight
            out[f"{name}.bias"] = lp.bias
        return out

    def copy(self) -> "AdaptorNet":
        clone = AdaptorNet(
            layers={k: v.copy() for k, v in self.layers.items()},
            feat_dim=self.feat_dim,
            hidden_dim=self.hidden_dim,
            out_dim=self.out_dim,
            dropout_p=self.dropout_p,
            pool=self.pool,
            normalize_output=self.normalize_output,
            feature_norm=self.feature_norm,
        )
        return clone


def build_net(
    feat_dim: int,
    seed_or_rng,
    hidden_dim: int = 320,
    out_dim: int = 1,
    dropout_p: float = 0.1,
    pool: str = "mean_std",
    normalize_output: bool = False,
    feature_norm: str = "l2",
) -> AdaptorNet:
    """Seeded construction; head is drawn after the trunk on the same stream."""
    if pool not in ("mean_std", "mean"):
        raise ParameterError(f"unknown pooling '{pool}'")
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    pooled = 2 * hidden_dim if pool == "mean_std" else hidden_dim
    layers = {
        "adaptor1": init_layer(rng, feat_dim, hidden_dim),
        "adaptor2": init_layer(rng, hidden_dim, hidden_dim),
        "head": init_layer(rng, pooled, out_dim),
    }
    return AdaptorNet(
        layers=layers,
        feat_dim=feat_dim,
        hidden_dim=hidden_dim,
        out_dim=out_dim,
        dropout_p=dropout_p,
        pool=pool,
        normalize_output=normalize_output,
        feature_norm=feature_norm,
    )


@dataclass
class ForwardCache:
    """Intermediates of one batched forward pass, consumed by backward."""

    x: np.ndarray           # stacked input (sum T, D)
    a1: np.ndarray          # pre-ReLU of adaptor1
    h1: np.ndarray          # post dropout
    a2: np.ndarray
    h2: np.ndarray
    mask1: np.ndarray | None
    mask2: np.ndarray | None
    offsets: list[int]      # segment boundaries into the stacked rows
    pooled: np.ndarray      # (B, pooled_dim)
    out_raw: np.ndarray     # head output before normalization (B, out_dim)
    out: np.ndarray         # final output (B, out_dim)
    norms: np.ndarray | None = None  # row norms used when normalize_output


def forward_batch(
    net: AdaptorNet,
    seqs: list[np.ndarray],
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardCache:
    """Run a list of (T_i, D) sequences through the network as one stack."""
    if not seqs:
        raise EmptyInputError("forward_batch needs at least one sequence")
    for s in seqs:
        if s.ndim != 2 or s.shape[1] != net.feat_dim:
            raise DimensionError(
                f"expected (T, {net.feat_dim}) sequences, got {s.shape}"
            )
        if s.shape[0] < 1:
            raise EmptyInputError("sequences must have T >= 1")
    x = np.concatenate(seqs, axis=0)
    offsets = [0]
    for s in seqs:
        offsets.append(offsets[-1] + s.shape[0])

    a1 = linear_forward(net.layers["adaptor1"], x)
    r1 = relu(a1)
    mask1 = mask2 = None
    if training and net.dropout_p > 0.0:
        mask1 = dropout_mask(r1.shape, net.dropout_p, rng)
        h1 = r1 * mask1
    else:
        h1 = r1
    a2 = linear_forward(net.layers["adaptor2"], h1)
    r2 = relu(a2)
    if training and net.dropout_p > 0.0:
        mask2 = dropout_mask(r2.shape, net.dropout_p, rng)
        h2 = r2 * mask2
    else:
        h2 = r2

    pool_fn = stats_pool if net.pool == "mean_std" else mean_pool
    pooled = np.stack(
        [pool_fn(h2[offsets[i] : offsets[i + 1]]) for i in range(len(seqs))]
    )
    out_raw = linear_forward(net.layers["head"], pooled)

    norms = None
    if net.normalize_output:
        norms = np.maximum(np.linalg.norm(out_raw, axis=1, keepdims=True), 1e-12)
        out = out_raw / norms
    else:
        out = out_raw
    return ForwardCache(
        x=x, a1=a1, h1=h1, a2=a2, h2=h2, mask1=mask1, mask2=mask2,
        offsets=offsets, pooled=pooled, out_raw=out_raw, out=out, norms=norms,
    )


def backward_batch(
    net: AdaptorNet, cache: ForwardCache, grad_out: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. all parameters, given dL/d out."""
    if net.normalize_output:
        # z = y / ||y||; dy = (dz - z (z . dz)) / ||y||
        z = cache.out
        dot = np.sum(grad_out * z, axis=1, keepdims=True)
        grad_raw = (grad_out - z * dot) / cache.norms
    else:
        grad_raw = grad_out

    grads: dict[str, np.ndarray] = {}
    gw, gb, grad_pooled = linear_backward(net.layers["head"], cache.pooled, grad_raw)
    grads["head.weight"] = gw
    grads["head.bias"] = gb

    pool_bwd = stats_pool_backward if net.pool == "mean_std" else mean_pool_backward
    grad_h2 = np.empty_like(cache.h2)
    for i in range(len(cache.offsets) - 1):
        lo, hi = cache.offsets[i], cache.offsets[i + 1]
        grad_h2[lo:hi] = pool_bwd(cache.h2[lo:hi], grad_pooled[i])

    if cache.mask2 is not None:
        grad_h2 = grad_h2 * cache.mask2
    grad_a2 = relu_backward(cache.a2, grad_h2)
    gw, gb, grad_h1 = linear_backward(net.layers["adaptor2"], cache.h1, grad_a2)
    grads["adaptor2.weight"] = gw
    grads["adaptor2.bias"] = gb

    if cache.mask1 is not None:
        grad_h1 = grad_h1 * cache.mask1
    grad_a1 = relu_backward(cache.a1, grad_h1)
    gw, gb, _ = linear_backward(net.layers["adaptor1"], cache.x, grad_a1)
    grads["adaptor1.weight"] = gw
    grads["adaptor1.bias"] = gb
    return grads


def pooled_embeddings(net: AdaptorNet, seqs: list[np.ndarray]) -> np.ndarray:
    """Eval-mode post-pooling vectors (B, pooled_dim); used for embedding dumps."""
    return forward_batch(net, seqs, training=False).pooled
