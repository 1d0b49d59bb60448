"""
Three ways to turn an analog window into spikes
===============================================

direct  - present the normalized window as a constant input current T times
rate    - Bernoulli spikes, per-step firing probability = clamped amplitude
delta   - ON/OFF event channels that fire when the signal moves by more
          than a threshold since the last event

The rate raster below is printed with one row per channel, one column per
time step ('|' spike, '.' quiet).
"""

import numpy as np

from fedspike.encoding import EncoderConfig, encode_batch

rng = np.random.default_rng(3)

# one example, 4 channels, 24 samples: slow ramps plus noise
t = np.linspace(0, 1, 24)
window = np.stack([np.sin(2 * np.pi * f * t) + 0.2 * rng.normal(size=t.size)
                   for f in (1, 2, 3, 5)])[None, :, :]

direct = encode_batch(window, EncoderConfig(scheme="direct", steps=8, seed=7))
print("direct: steps =", len(direct), " each step shape =", direct[0].shape)
print("        step 0 is step 7:", np.array_equal(direct[0], direct[7]))

rate = encode_batch(window, EncoderConfig(scheme="rate", steps=8, seed=7))
print("\nrate: binary tensor", rate.data.shape, "(T, B, C, L)")
raster = rate.data[:, 0, :, 5]  # all channels at window position 5
for c in range(raster.shape[1]):
    row = "".join("|" if s else "." for s in raster[:, c])
    print(f"  ch{c}  {row}")
print("  mean firing rate:", rate.data.mean().round(3))

delta = encode_batch(window, EncoderConfig(scheme="delta", delta_threshold=0.4))
print("\ndelta: binary tensor", delta.data.shape, "(L, B, 2C, 1)")
on = delta.data[:, 0, :4, 0].sum()
off = delta.data[:, 0, 4:, 0].sum()
print(f"  ON events {on:.0f}, OFF events {off:.0f} "
      f"(raw-signal threshold 0.4, reference tracks by +-0.4 steps)")
