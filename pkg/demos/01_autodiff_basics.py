"""
Tape-based gradients on a tiny regression
=========================================

Record a forward computation on a tape, pull gradients back through it,
and take a few SGD steps. Everything is float64 numpy under the hood.
"""

import numpy as np

from fedspike import autodiff as ad
from fedspike.autodiff import ParameterSet, Tape, backward, sgd_step

rng = np.random.default_rng(0)

# A little ground-truth linear map we will try to recover: y = x @ W* + b*
w_true = np.array([[2.0], [-1.0]])
b_true = np.array([0.5])
x = rng.normal(size=(32, 2))
y = x @ w_true + b_true

params = ParameterSet([("w", np.zeros((2, 1))), ("b", np.zeros(1))])
print("layout fingerprint:", params.fingerprint[:16], "...")

for step in range(200):
    tape = Tape()
    pn = tape.params_from(params)
    pred = ad.affine(tape.leaf(x), pn["w"], pn["b"])
    err = ad.sub(pred, tape.leaf(y))
    loss = ad.mean_all(ad.mul(err, err))
    tape.mark_loss(loss)
    grads = backward(tape)
    params = sgd_step(params, grads, lr=0.1)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {float(loss.value):.6f}")

print("recovered w:", params["w"].ravel(), " b:", params["b"])

# ---------------------------------------------------------------------------
# Sanity: the analytic gradient agrees with a central finite difference.
# ---------------------------------------------------------------------------

def loss_at(p):
    tape = Tape()
    pn = tape.params_from(p)
    err = ad.sub(ad.affine(tape.leaf(x), pn["w"], pn["b"]), tape.leaf(y))
    node = ad.mean_all(ad.mul(err, err))
    tape.mark_loss(node)
    return tape, node

tape, node = loss_at(params)
g = backward(tape)["w"][0, 0]

h = 1e-5
bumped = ParameterSet([("w", params["w"] + np.array([[h], [0.0]])), ("b", params["b"])])
dipped = ParameterSet([("w", params["w"] - np.array([[h], [0.0]])), ("b", params["b"])])
fd = (float(loss_at(bumped)[1].value) - float(loss_at(dipped)[1].value)) / (2 * h)
print(f"analytic dL/dw[0,0] = {g:.10f}   finite diff = {fd:.10f}")
