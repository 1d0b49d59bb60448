"""
One leaky integrate-and-fire neuron, step by step
=================================================

u = beta * v + i; spike when u >= theta; reset by subtracting theta
(default) or snapping to zero. The trace below drives a single neuron
with a current ramp and prints membrane potential and spikes.
"""

import numpy as np

from fedspike.autodiff import Tape
from fedspike.models import LifConfig, lif_step

cfg = LifConfig(beta=0.9, theta=1.0, reset="subtract")

tape = Tape()
v = tape.leaf(np.zeros((1, 1)))
currents = np.concatenate([np.full(6, 0.25), np.full(6, 0.05)])

print(" t   input    u=b*v+i   spike   v'")
for t, i_t in enumerate(currents):
    u = cfg.beta * float(v.value[0, 0]) + i_t
    v, s = lif_step(v, tape.leaf(np.full((1, 1), i_t)), cfg)
    mark = "*" if s.value[0, 0] else " "
    print(f"{t:2d}   {i_t:.2f}    {u:7.4f}    {mark}     {float(v.value[0, 0]):7.4f}")

# ---------------------------------------------------------------------------
# Reset modes diverge once the neuron overshoots: subtraction keeps the
# surplus above threshold, zeroing throws it away.
# ---------------------------------------------------------------------------
for reset in ("subtract", "zero"):
    cfg = LifConfig(beta=0.5, theta=1.0, reset=reset)
    tape = Tape()
    v = tape.leaf(np.zeros((1, 1)))
    v, s = lif_step(v, tape.leaf(np.full((1, 1), 1.7)), cfg)
    print(f"reset={reset:8s}  i=1.7 -> spike={int(s.value[0, 0])}, "
          f"v'={float(v.value[0, 0]):.2f}")

# Spike outputs are strictly binary; the smooth surrogate only exists in
# the backward pass.
print("spike values seen:", sorted({float(x) for x in s.value.ravel()}))
