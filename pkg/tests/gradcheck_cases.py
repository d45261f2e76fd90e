"""Finite-difference case builders for every trainable operation.

Each builder returns (loss_fn, flat_params) where loss_fn maps a flat
parameter vector to (loss, analytic_gradient). The same cases back the unit
tests and the acceptance gradient suite.
"""

import numpy as np

from sevreg.contrastive import (
    Batch,
    PairingSpec,
    ntxent_loss,
    positive_pairs,
    simclr_loss,
    stage2_loss,
    variance_reg,
)
from sevreg.gradcheck import finite_diff_check, flatten_params, unflatten_params
from sevreg.nn import (
    LayerParams,
    backward_batch,
    build_net,
    dropout_mask,
    forward_batch,
    huber_loss,
    huber_loss_batch,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
    stats_pool,
    stats_pool_backward,
)


def linear_huber_case(rng):
    """Single linear layer into a per-row Huber loss."""
    t, n_in = 3, 4
    x = rng.standard_normal((t, n_in))
    targets = rng.standard_normal(t)
    template = {"weight": np.zeros((1, n_in)), "bias": np.zeros(1)}

    def loss_fn(flat):
        p = unflatten_params(flat, template)
        layer = LayerParams(p["weight"], p["bias"])
        out = linear_forward(layer, x)
        value, dpred = huber_loss_batch(out[:, 0], targets, 0.5)
        gw, gb, _ = linear_backward(layer, x, dpred[:, None])
        return value, flatten_params({"weight": gw, "bias": gb})

    init = {"weight": rng.standard_normal((1, n_in)), "bias": rng.standard_normal(1)}
    return loss_fn, flatten_params(init)


def relu_case(rng):
    """Weighted sum through ReLU; inputs are kept away from the kink."""
    x0 = rng.standard_normal((3, 4))
    x0[np.abs(x0) < 0.05] += 0.1
    w = rng.standard_normal((3, 4))
    template = {"x": np.zeros_like(x0)}

    def loss_fn(flat):
        x = unflatten_params(flat, template)["x"]
        value = float(np.sum(relu(x) * w))
        grad = relu_backward(x, w)
        return value, flatten_params({"x": grad})

    return loss_fn, flatten_params({"x": x0})


def dropout_fixed_mask_case(rng):
    """Training-mode dropout with a frozen mask (deterministic loss_fn)."""
    x0 = rng.standard_normal((4, 3))
    mask = dropout_mask(x0.shape, 0.3, rng)
    w = rng.standard_normal(x0.shape)
    template = {"x": np.zeros_like(x0)}

    def loss_fn(flat):
        x = unflatten_params(flat, template)["x"]
        value = float(np.sum(x * mask * w))
        return value, flatten_params({"x": mask * w})

    return loss_fn, flatten_params({"x": x0})


def stats_pool_case(rng):
    """Weighted sum of the pooled mean/std vector, gradient w.r.t. frames."""
    h0 = rng.standard_normal((5, 3))
    w = rng.standard_normal(6)
    template = {"h": np.zeros_like(h0)}

    def loss_fn(flat):
        h = unflatten_params(flat, template)["h"]
        value = float(stats_pool(h) @ w)
        return value, flatten_params({"h": stats_pool_backward(h, w)})

    return loss_fn, flatten_params({"h": h0})


def huber_case(rng):
    """Scalar Huber; the prediction is kept away from the |e| = delta kink."""
    target = float(rng.standard_normal())
    pred0 = target + float(rng.choice([-1.5, -0.25, 0.25, 1.5]))

    def loss_fn(flat):
        value, grad = huber_loss(float(flat[0]), target, 0.5)
        return value, np.array([grad])

    return loss_fn, np.array([pred0])


def _relu_margin(net, seqs) -> float:
    """Smallest |pre-activation|; tiny margins straddle the ReLU kink under
    central differences, so instances are resampled until clear of it."""
    cache = forward_batch(net, seqs, training=False)
    return min(float(np.min(np.abs(cache.a1))), float(np.min(np.abs(cache.a2))))


def _net_case(rng, projector: bool):
    feat_dim, hidden = 3, 4
    while True:
        seqs = [
            rng.standard_normal((int(rng.integers(2, 5)), feat_dim)) for _ in range(3)
        ]
        net = build_net(
            feat_dim=feat_dim,
            seed_or_rng=int(rng.integers(1 << 30)),
            hidden_dim=hidden,
            out_dim=4 if projector else 1,
            dropout_p=0.0,
            normalize_output=projector,
        )
        if _relu_margin(net, seqs) > 5e-4:
            break
    template = {k: np.zeros_like(v) for k, v in net.param_arrays().items()}
    if projector:
        w_out = rng.standard_normal((3, 4))
    else:
        cache = forward_batch(net, seqs, training=False)
        # keep each |error| away from the Huber delta kink as well
        targets = cache.out[:, 0] + rng.choice([-1.5, -0.25, 0.25, 1.5], size=3)

    def loss_fn(flat):
        values = unflatten_params(flat, template)
        arrays = net.param_arrays()
        for k, v in values.items():
            arrays[k][...] = v
        cache = forward_batch(net, seqs, training=False)
        if projector:
            value = float(np.sum(cache.out * w_out))
            grads = backward_batch(net, cache, w_out)
        else:
            value, dpred = huber_loss_batch(cache.out[:, 0], targets, 0.5)
            grads = backward_batch(net, cache, dpred[:, None])
        return value, flatten_params(grads)

    return loss_fn, flatten_params(net.param_arrays())


def regression_net_case(rng):
    """Full regression network (linear/ReLU/pool/head) into Huber."""
    return _net_case(rng, projector=False)


def projector_case(rng):
    """Projection network incl. the unit-norm output, under a linear probe."""
    return _net_case(rng, projector=True)


def _unit_rows(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _z_case(rng, loss_of_z, n=8, d=4):
    z0 = _unit_rows(rng, n, d)
    template = {"z": np.zeros_like(z0)}

    def loss_fn(flat):
        z = unflatten_params(flat, template)["z"]
        result = loss_of_z(z)
        return result.value, flatten_params({"z": result.grad})

    return loss_fn, flatten_params({"z": z0})


def pairing_batch(rng, b=4):
    """Random view batch whose labels exercise all pairing strategies."""
    labels = rng.uniform(1.0, 7.0, size=b)
    views = [np.zeros((1, 1))] * (2 * b)  # losses only read labels and Z
    return Batch(views=views, labels=np.tile(labels, 2), b=b)


def simclr_case(rng, tau=0.5):
    return _z_case(rng, lambda z: simclr_loss(z, tau))


def ntxent_case(rng, strategy, tau=0.5):
    batch = pairing_batch(rng)
    spec = PairingSpec(strategy=strategy, tau=tau)
    pairs = positive_pairs(batch, spec)
    return _z_case(rng, lambda z: ntxent_loss(z, pairs, tau))


def variance_case(rng, gamma=2.0):
    # unit-norm rows keep every per-dimension std well below gamma, so the
    # hinge is active and smooth everywhere
    return _z_case(rng, lambda z: variance_reg(z, gamma))


def stage2_z_case(rng, strategy="coarse"):
    batch = pairing_batch(rng)
    spec = PairingSpec(strategy=strategy, tau=1.0)
    return _z_case(rng, lambda z: stage2_loss(z, batch, spec, gamma=2.0, var_weight=0.1))


def stage2_full_case(rng):
    """Composed check: projector parameters through the full stage-2 loss."""
    feat_dim, hidden, embed, b = 3, 4, 4, 4
    while True:
        seqs = [
            rng.standard_normal((int(rng.integers(2, 5)), feat_dim))
            for _ in range(2 * b)
        ]
        net = build_net(
            feat_dim=feat_dim,
            seed_or_rng=int(rng.integers(1 << 30)),
            hidden_dim=hidden,
            out_dim=embed,
            dropout_p=0.0,
            normalize_output=True,
        )
        if _relu_margin(net, seqs) > 5e-4:
            break
    labels = np.tile(rng.uniform(1.0, 7.0, size=b), 2)
    batch = Batch(views=seqs, labels=labels, b=b)
    spec = PairingSpec(strategy="coarse", tau=1.0)
    template = {k: np.zeros_like(v) for k, v in net.param_arrays().items()}

    def loss_fn(flat):
        values = unflatten_params(flat, template)
        arrays = net.param_arrays()
        for k, v in values.items():
            arrays[k][...] = v
        cache = forward_batch(net, batch.views, training=False)
        result = stage2_loss(cache.out, batch, spec, gamma=2.0, var_weight=0.1)
        grads = backward_batch(net, cache, result.grad)
        return result.value, flatten_params(grads)

    return loss_fn, flatten_params(net.param_arrays())


GRADIENT_SUITE = [
    ("linear+huber", linear_huber_case, 1e-4),
    ("relu", relu_case, 1e-4),
    ("dropout-fixed-mask", dropout_fixed_mask_case, 1e-4),
    ("stats_pool", stats_pool_case, 1e-4),
    ("huber", huber_case, 1e-4),
    ("regression-net", regression_net_case, 1e-4),
    ("projector", projector_case, 1e-4),
    ("simclr_loss", simclr_case, 1e-3),
    ("ntxent[sup]", lambda rng: ntxent_case(rng, "sup"), 1e-3),
    ("ntxent[dis]", lambda rng: ntxent_case(rng, "dis"), 1e-3),
    ("ntxent[con]", lambda rng: ntxent_case(rng, "con"), 1e-3),
    ("ntxent[coarse]", lambda rng: ntxent_case(rng, "coarse"), 1e-3),
    ("variance_reg", variance_case, 1e-4),
    ("stage2_loss", stage2_z_case, 1e-3),
    ("stage2-projector", stage2_full_case, 1e-3),
]


def run_gradient_suite(n_instances=20, seed=0):
    """Run every case n_instances times; returns [(name, worst_rel_err, rtol)]."""
    results = []
    for name, builder, rtol in GRADIENT_SUITE:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_instances):
            loss_fn, params = builder(rng)
            report = finite_diff_check(loss_fn, params, eps=1e-5, rtol=rtol)
            worst = max(worst, report.max_rel_err)
        results.append((name, worst, rtol))
    return results
