"""Spike-domain input codings for normalized EEG windows.

Three schemes:

* direct-current (default): the analog window is presented unchanged as the
  input current at every one of T steps; the first spiking layer does the
  actual conversion to binary events. Deterministic, loses no amplitude
  information.
* rate: per-element Bernoulli spikes with probability equal to the min-max
  clamped value, seeded.
* delta: per-channel delta modulation along the window's own time axis; ON
  and OFF events land on two separate feature planes and T equals the window
  length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import substream

SCHEMES = ("direct", "rate", "delta")


@dataclass(frozen=True)
class EncoderConfig:
    scheme: str = "direct"
    steps: int = 8
    delta_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown encoder scheme {self.scheme!r}; pick from {SCHEMES}")
        if self.steps < 1:
            raise ValueError(f"encoder steps must be >= 1, got {self.steps}")
        if self.delta_threshold <= 0:
            raise ValueError(f"delta threshold must be > 0, got {self.delta_threshold}")

    def out_channels(self, in_channels: int) -> int:
        return 2 * in_channels if self.scheme == "delta" else in_channels

    def time_steps(self, window_len: int) -> int:
        return window_len if self.scheme == "delta" else self.steps


class SpikeTensor:
    """Strictly binary (T, planes..., positions) spike array."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.size and not np.isin(data, (0.0, 1.0)).all():
            raise ValueError("spike tensor must be strictly binary")
        self.data = data

    @property
    def steps(self) -> int:
        return self.data.shape[0]

    @property
    def rate(self) -> float:
        return float(self.data.mean()) if self.data.size else 0.0

    def __getitem__(self, t):
        return self.data[t]

    def __len__(self):
        return self.data.shape[0]


class DirectCurrent:
    """Sequence of T identical current tensors (stored once)."""

    def __init__(self, window: np.ndarray, steps: int):
        if steps < 1:
            raise ValueError(f"step count must be >= 1, got {steps}")
        self.window = np.asarray(window, dtype=np.float64)
        self.steps = int(steps)

    def __getitem__(self, t):
        if not -self.steps <= t < self.steps:
            raise IndexError(t)
        return self.window

    def __len__(self):
        return self.steps

    def __iter__(self):
        return (self.window for _ in range(self.steps))


def encode_direct(window: np.ndarray, steps: int) -> DirectCurrent:
    """Present the window as input current at each of `steps` steps."""
    return DirectCurrent(window, steps)


def _clamp01(window: np.ndarray) -> np.ndarray:
    """Min-max clamp to [0, 1]; a constant window codes at probability 0.5."""
    w = np.asarray(window, dtype=np.float64)
    lo, hi = w.min(), w.max()
    return np.full_like(w, 0.5) if hi == lo else (w - lo) / (hi - lo)


def encode_rate(window: np.ndarray, steps: int, seed: int) -> SpikeTensor:
    """Bernoulli rate coding of the min-max clamped window."""
    if steps < 1:
        raise ValueError(f"step count must be >= 1, got {steps}")
    p = _clamp01(window)
    draws = substream(seed, "encoder").random(size=(steps,) + p.shape)
    return SpikeTensor((draws < p).astype(np.float64))


def encode_delta(window: np.ndarray, threshold: float) -> SpikeTensor:
    """Delta modulation along the window's own time axis.

    Per channel the reference r starts at the first sample; at each step an
    ON spike fires if x - r >= threshold (then r += threshold), an OFF spike
    if r - x >= threshold (then r -= threshold). Output shape is
    (window_len, 2 * channels, 1): ON planes first, then OFF planes.
    """
    if threshold <= 0:
        raise ValueError(f"delta threshold must be > 0, got {threshold}")
    w = np.asarray(window, dtype=np.float64)
    n_ch, length = w.shape
    out = np.zeros((length, 2 * n_ch, 1))
    r = w[:, 0].copy()
    for t in range(length):
        on = (w[:, t] - r) >= threshold
        off = ~on & ((r - w[:, t]) >= threshold)
        r = r + threshold * on - threshold * off
        out[t, :n_ch, 0] = on
        out[t, n_ch:, 0] = off
    return SpikeTensor(out)


def encode_batch(windows: np.ndarray, cfg: EncoderConfig):
    """Encode a (B, C, L) batch into per-step model input.

    direct -> DirectCurrent over the whole batch; rate -> binary
    (T, B, C, L) with an independent substream per example; delta ->
    binary (L, B, 2C, 1).
    """
    windows = np.asarray(windows, dtype=np.float64)
    if cfg.scheme == "direct":
        return DirectCurrent(windows, cfg.steps)
    if cfg.scheme == "rate":
        per = [encode_rate_indexed(w, cfg.steps, cfg.seed, i)
               for i, w in enumerate(windows)]
        return SpikeTensor(np.stack([s.data for s in per], axis=1))
    per = [encode_delta(w, cfg.delta_threshold) for w in windows]
    return SpikeTensor(np.stack([s.data for s in per], axis=1))


def encode_rate_indexed(window, steps, seed, index) -> SpikeTensor:
    """Rate coding with a per-example substream so batch members differ."""
    p = _clamp01(window)
    draws = substream(seed, "encoder", index).random(size=(steps,) + p.shape)
    return SpikeTensor((draws < p).astype(np.float64))
