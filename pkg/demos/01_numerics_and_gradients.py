"""Tour of the numerics core: layers, pooling, Huber, Adam, gradient checks.

Run from the repository root:

    python3 demos/01_numerics_and_gradients.py
"""

import numpy as np

from sevreg.gradcheck import finite_diff_check, flatten_params, unflatten_params
from sevreg.nn import (
    LayerParams,
    backward_batch,
    build_net,
    forward_batch,
    huber_loss,
    huber_loss_batch,
    linear_forward,
    stats_pool,
)
from sevreg.optim import init_optimizer, optimizer_step

rng = np.random.default_rng(0)

# ---------------------------------------------------------------------------
# Forward passes on a toy sequence
# ---------------------------------------------------------------------------
print("== layers ==")
x = rng.standard_normal((4, 3))
layer = LayerParams(rng.standard_normal((2, 3)), np.zeros(2))
print("linear output shape:", linear_forward(layer, x).shape)

pooled = stats_pool(x)
print("stats_pool doubles the dimension:", x.shape[1], "->", pooled.shape[0])
print("  mean half:", np.round(pooled[:3], 3))
print("  std  half:", np.round(pooled[3:], 3))

for error in (0.0, 0.25, 2.0):
    value, grad = huber_loss(error, 0.0, 0.5)
    print(f"huber(e={error:4}): value={value:.5f} grad={grad:+.2f}")

# ---------------------------------------------------------------------------
# The adaptor network: two linear layers, ReLU/dropout, pooling, linear head
# ---------------------------------------------------------------------------
print("\n== adaptor network ==")
net = build_net(feat_dim=3, seed_or_rng=1, hidden_dim=16, out_dim=1)
seqs = [rng.standard_normal((t, 3)) for t in (5, 9, 7)]
cache = forward_batch(net, seqs)
print("three sequences of different lengths -> predictions", cache.out.ravel())

# ---------------------------------------------------------------------------
# Train the toy net against random targets with AdamW
# ---------------------------------------------------------------------------
print("\n== optimizing ==")
targets = np.array([2.0, 5.0, 3.5])
opt = init_optimizer(net.param_arrays(), lr=0.01, weight_decay=0.01, decoupled=True)
for step in range(200):
    cache = forward_batch(net, seqs)
    loss, dpred = huber_loss_batch(cache.out[:, 0], targets, 0.5)
    grads = backward_batch(net, cache, dpred[:, None])
    optimizer_step(net.param_arrays(), grads, opt)
    if step % 50 == 0 or step == 199:
        print(f"step {step:3d}: huber loss {loss:.6f}")

# ---------------------------------------------------------------------------
# Check the analytic gradients with central finite differences
# ---------------------------------------------------------------------------
print("\n== gradient check ==")
template = {k: np.zeros_like(v) for k, v in net.param_arrays().items()}


def loss_fn(flat):
    values = unflatten_params(flat, template)
    arrays = net.param_arrays()
    for k, v in values.items():
        arrays[k][...] = v
    cache = forward_batch(net, seqs)
    value, dpred = huber_loss_batch(cache.out[:, 0], targets, 0.5)
    return value, flatten_params(backward_batch(net, cache, dpred[:, None]))


report = finite_diff_check(loss_fn, flatten_params(net.param_arrays()), eps=1e-5)
print(f"max relative error over {report.n_params} parameters: {report.max_rel_err:.2e}")
print("passed at rtol 1e-4:", report.passed)
