"""
Training a small spiking classifier (no federation yet)
=======================================================

A two-class toy problem: windows whose channels carry either a low or a
high frequency. A small fully-connected LIF network with the spike-count
readout learns it in a few dozen plain-SGD steps.
"""

import numpy as np

from fedspike.autodiff import sgd_step, substream
from fedspike.encoding import EncoderConfig
from fedspike.models import (LifConfig, ModelArch, evaluate, loss_and_grads,
                             make_model)

rng = np.random.default_rng(1)
C, L, N = 4, 32, 120
t = np.arange(L) / L

def batch(n):
    labels = rng.integers(0, 2, size=n)
    freqs = np.where(labels == 0, 2.0, 6.0)
    w = np.stack([np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi, (C, 1)))
                  for f in freqs])
    return w + 0.3 * rng.normal(size=(n, C, L)), labels

train_w, train_y = batch(N)
test_w, test_y = batch(48)

model = make_model("snn", arch=ModelArch(conv=(), fc=(24,)),
                   lif=LifConfig(beta=0.9), in_channels=C, window_len=L,
                   n_classes=2, gain=1.5)
params = model.init_params(seed=0)
enc = EncoderConfig(scheme="direct", steps=8, seed=0)

shuffle = substream(0, "shuffle")
for epoch in range(30):
    order = shuffle.permutation(N)
    for lo in range(0, N, 32):
        idx = order[lo:lo + 32]
        loss, grads, acc, stats = loss_and_grads(
            model, params, train_w[idx], train_y[idx], enc,
            rate_penalty=1.0, rate_target=0.2)
        params = sgd_step(params, grads, 0.05)
    if epoch % 5 == 0:
        test_loss, test_acc, st = evaluate(model, params, test_w, test_y, enc)
        rates = " ".join(f"{k}={v:.2f}" for k, v in st.rates().items())
        print(f"epoch {epoch:2d}  test loss {test_loss:.4f}  "
              f"acc {test_acc:.3f}  firing rates {rates}")

test_loss, test_acc, _ = evaluate(model, params, test_w, test_y, enc)
print(f"\nfinal test accuracy {test_acc:.3f} (chance 0.5)")
