"""The three 4-class EEG classifiers: spiking CNN, matched ReLU CNN, LSTM.

The spiking model is a conv + fully-connected stack of leaky
integrate-and-fire layers unrolled over T encoder steps and trained with
surrogate gradients; its readout is an affine map of time-averaged spike
counts, so all inter-layer traffic after the first layer is binary. The CNN
shares the exact trunk layout (same parameter names and shapes) with LIF
replaced by ReLU and time collapsed. The LSTM consumes the window
column-by-column through two stacked cells and reads out the final hidden
state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tape, backward, substream
from .encoding import DirectCurrent, EncoderConfig, SpikeTensor, encode_batch

N_CLASSES = 4


@dataclass(frozen=True)
class LifConfig:
    """Discrete-time leaky integrate-and-fire: u = beta*v + i, spike at
    u >= theta, reset by subtraction (default) or to zero."""

    beta: float = 0.9
    theta: float = 1.0
    reset: str = "subtract"
    slope: float = 25.0
    soft: bool = False  # differentiable soft threshold, gradient checks only

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if self.theta <= 0.0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.reset not in ("subtract", "zero"):
            raise ValueError(f"reset must be 'subtract' or 'zero', got {self.reset!r}")
        if self.slope <= 0.0:
            raise ValueError(f"surrogate slope must be > 0, got {self.slope}")


@dataclass(frozen=True)
class ModelArch:
    """Shared trunk description: conv layers as (out_ch, kernel, stride),
    then fully-connected widths, then the class readout."""

    conv: tuple = ((8, 3, 8), (32, 5, 4))
    fc: tuple = (1536,)
    lstm_hidden: int = 64
    lstm_layers: int = 2


@dataclass
class SpikeStats:
    """Per-spiking-layer activity from one forward pass.

    `layers` entries: name, spikes (total over batch and steps), units
    (neurons per example), synapses_in (incoming connection count, the
    layer's MAC-equivalent budget per pass). input_rate is the mean rate of
    the binary input spikes, None for analog (direct-current) input.
    """

    steps: int
    batch: int
    input_rate: float | None
    layers: list
    count_nodes: list = field(default_factory=list, repr=False)

    def rate(self, name: str) -> float:
        for entry in self.layers:
            if entry["name"] == name:
                denom = entry["units"] * self.batch * self.steps
                return entry["spikes"] / denom if denom else 0.0
        raise KeyError(name)

    def rates(self) -> dict:
        return {entry["name"]: self.rate(entry["name"]) for entry in self.layers}


def merge_stats(parts) -> "SpikeStats":
    """Combine SpikeStats from consecutive batches of the same model."""
    parts = [p for p in parts if p is not None]
    if not parts:
        return None
    total_batch = sum(p.batch for p in parts)
    layers = []
    for i, entry in enumerate(parts[0].layers):
        layers.append(dict(entry, spikes=sum(p.layers[i]["spikes"] for p in parts)))
    if parts[0].input_rate is None:
        in_rate = None
    else:
        in_rate = sum(p.input_rate * p.batch for p in parts) / total_batch
    return SpikeStats(steps=parts[0].steps, batch=total_batch,
                      input_rate=in_rate, layers=layers)


def lif_step(v, i, cfg: LifConfig):
    """One LIF update on tape nodes: returns (v', spikes)."""
    u = ad.add(ad.scale(v, cfg.beta), i)
    s = ad.spike(u, cfg.theta, cfg.slope, soft=cfg.soft)
    if cfg.reset == "subtract":
        v_next = ad.sub(u, ad.scale(s, cfg.theta))
    else:
        v_next = ad.mul(u, ad.add_const(ad.scale(s, -1.0), 1.0))
    return v_next, s


def trunk_plan(arch: ModelArch, in_channels: int, window_len: int,
               n_classes: int = N_CLASSES):
    """Resolve the conv/fc trunk into concrete layer records.

    Each record: name, kind, w_shape, b_shape, stride, macs (per single
    pass), units (neurons per example). Shared by the spiking and ReLU
    models and by the energy accounting.
    """
    layers = []
    ch, length = in_channels, window_len
    for idx, (out_ch, kernel, stride) in enumerate(arch.conv):
        if kernel > length:
            raise ValueError(f"conv{idx}: kernel {kernel} exceeds input length {length}")
        if stride < 1 or out_ch < 1:
            raise ValueError(f"conv{idx}: bad (out_ch, kernel, stride) "
                             f"{(out_ch, kernel, stride)}")
        out_len = (length - kernel) // stride + 1
        layers.append(dict(name=f"conv{idx}", kind="conv",
                           w_shape=(out_ch, ch, kernel), b_shape=(out_ch,),
                           stride=stride, macs=out_len * kernel * ch * out_ch,
                           units=out_ch * out_len))
        ch, length = out_ch, out_len
    width = ch * length
    for j, out in enumerate(arch.fc):
        if out < 1:
            raise ValueError(f"fc{j}: width must be >= 1, got {out}")
        layers.append(dict(name=f"fc{j}", kind="fc",
                           w_shape=(width, out), b_shape=(out,),
                           stride=None, macs=width * out, units=out))
        width = out
    layers.append(dict(name="readout", kind="fc",
                       w_shape=(width, n_classes), b_shape=(n_classes,),
                       stride=None, macs=width * n_classes, units=n_classes))
    return layers


def _uniform_init(rng, shape, fan_in, gain):
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SnnModel:
    kind = "snn"

    def __init__(self, arch: ModelArch = ModelArch(), lif: LifConfig = LifConfig(),
                 in_channels: int = 64, window_len: int = 640,
                 n_classes: int = N_CLASSES, gain: float = 1.0):
        self.arch = arch
        self.lif = lif
        self.in_channels = in_channels
        self.window_len = window_len
        self.n_classes = n_classes
        self.gain = gain
        self.plan = trunk_plan(arch, in_channels, window_len, n_classes)

    def init_params(self, seed: int) -> ParameterSet:
        entries = []
        for layer in self.plan:
            rng = substream(seed, "init", self.kind, layer["name"])
            fan_in = int(np.prod(layer["w_shape"][1:])) if layer["kind"] == "conv" \
                else layer["w_shape"][0]
            entries.append((layer["name"] + ".w",
                            _uniform_init(rng, layer["w_shape"], fan_in, self.gain)))
            entries.append((layer["name"] + ".b", np.zeros(layer["b_shape"])))
        return ParameterSet(entries)

    def forward(self, tape: Tape, pn: dict, encoded):
        """Unroll the LIF stack over the encoded input sequence.

        encoded: DirectCurrent (analog window each step) or SpikeTensor
        (binary (T, B, ...) input). Returns (logits node, SpikeStats).
        """
        steps = len(encoded)
        first = np.asarray(encoded[0])
        batch = first.shape[0]
        spiking = self.plan[:-1]
        readout = self.plan[-1]

        analog_input = isinstance(encoded, DirectCurrent)
        # With a constant input current the first layer's drive is the same
        # every step; compute it once.
        hoisted = None
        if analog_input:
            x0 = tape.leaf(self._shaped_input(first, spiking[0]), name="input")
            hoisted = self._drive(x0, spiking[0], pn)

        v = [None] * len(spiking)
        spike_sums = [0.0] * len(spiking)
        per_layer_spikes = [[] for _ in spiking]
        for t in range(steps):
            if hoisted is not None:
                cur = hoisted
            else:
                x_t = tape.leaf(self._shaped_input(np.asarray(encoded[t]), spiking[0]),
                                name=None)
                cur = self._drive(x_t, spiking[0], pn)
            h = None
            for li, layer in enumerate(spiking):
                if li > 0:
                    cur = self._drive(h, layer, pn)
                if v[li] is None:
                    v[li] = tape.leaf(np.zeros(cur.value.shape))
                v[li], s = lif_step(v[li], cur, self.lif)
                spike_sums[li] += float(s.value.sum())
                per_layer_spikes[li].append(s)
                h = s

        counts = [ad.add_n(nodes) if len(nodes) > 1 else nodes[0]
                  for nodes in per_layer_spikes]
        flat = counts[-1] if counts[-1].value.ndim == 2 else \
            ad.reshape(counts[-1], (batch, spiking[-1]["units"]))
        logits = ad.affine(flat, pn["readout.w"], pn["readout.b"])

        if analog_input:
            in_rate = None
        else:
            in_rate = float(np.mean([np.asarray(encoded[t]).mean()
                                     for t in range(steps)]))
        layer_entries = [dict(name=layer["name"], spikes=total,
                              units=layer["units"], synapses_in=layer["macs"])
                         for layer, total in zip(spiking, spike_sums)]
        stats = SpikeStats(steps=steps, batch=batch, input_rate=in_rate,
                           layers=layer_entries, count_nodes=counts)
        return logits, stats

    def _shaped_input(self, x, first_layer):
        """Match the raw (B, C, L) input to what the first layer expects."""
        if first_layer["kind"] == "conv":
            return x
        return x.reshape(x.shape[0], -1)

    def _drive(self, h, layer, pn):
        """Synaptic input current for one trunk layer."""
        if layer["kind"] == "conv":
            return ad.conv1d(h, pn[layer["name"] + ".w"], pn[layer["name"] + ".b"],
                             stride=layer["stride"])
        if h.value.ndim != 2:
            h = ad.reshape(h, (h.value.shape[0], layer["w_shape"][0]))
        return ad.affine(h, pn[layer["name"] + ".w"], pn[layer["name"] + ".b"])


class CnnModel:
    kind = "cnn"

    def __init__(self, arch: ModelArch = ModelArch(), in_channels: int = 64,
                 window_len: int = 640, n_classes: int = N_CLASSES,
                 gain: float = 1.0):
        self.arch = arch
        self.in_channels = in_channels
        self.window_len = window_len
        self.n_classes = n_classes
        self.gain = gain
        self.plan = trunk_plan(arch, in_channels, window_len, n_classes)

    def init_params(self, seed: int) -> ParameterSet:
        entries = []
        for layer in self.plan:
            rng = substream(seed, "init", self.kind, layer["name"])
            fan_in = int(np.prod(layer["w_shape"][1:])) if layer["kind"] == "conv" \
                else layer["w_shape"][0]
            entries.append((layer["name"] + ".w",
                            _uniform_init(rng, layer["w_shape"], fan_in, self.gain)))
            entries.append((layer["name"] + ".b", np.zeros(layer["b_shape"])))
        return ParameterSet(entries)

    def forward(self, tape: Tape, pn: dict, windows: np.ndarray):
        """Single pass over the raw window; ReLU where the SNN spikes."""
        windows = np.asarray(windows, dtype=np.float64)
        batch = windows.shape[0]
        h = tape.leaf(windows, name="input")
        for layer in self.plan[:-1]:
            if layer["kind"] == "conv":
                h = ad.relu(ad.conv1d(h, pn[layer["name"] + ".w"],
                                      pn[layer["name"] + ".b"], stride=layer["stride"]))
            else:
                if h.value.ndim != 2:
                    h = ad.reshape(h, (batch, layer["w_shape"][0]))
                h = ad.relu(ad.affine(h, pn[layer["name"] + ".w"],
                                      pn[layer["name"] + ".b"]))
        if h.value.ndim != 2:
            h = ad.reshape(h, (batch, self.plan[-1]["w_shape"][0]))
        return ad.affine(h, pn["readout.w"], pn["readout.b"])


class LstmModel:
    kind = "lstm"

    def __init__(self, arch: ModelArch = ModelArch(), in_channels: int = 64,
                 window_len: int = 640, n_classes: int = N_CLASSES,
                 gain: float = 1.0):
        self.arch = arch
        self.in_channels = in_channels
        self.window_len = window_len
        self.n_classes = n_classes
        self.gain = gain
        self.hidden = arch.lstm_hidden
        self.layers = arch.lstm_layers
        if self.hidden < 1 or self.layers < 1:
            raise ValueError("lstm_hidden and lstm_layers must be >= 1")

    @property
    def plan(self):
        out = []
        size_in = self.in_channels
        for l in range(self.layers):
            out.append(dict(name=f"lstm{l}", kind="lstm",
                            macs=4 * (size_in + self.hidden) * self.hidden * self.window_len,
                            units=self.hidden))
            size_in = self.hidden
        out.append(dict(name="readout", kind="fc",
                        macs=self.hidden * self.n_classes, units=self.n_classes))
        return out

    def init_params(self, seed: int) -> ParameterSet:
        entries = []
        size_in = self.in_channels
        H = self.hidden
        for l in range(self.layers):
            rng = substream(seed, "init", self.kind, f"lstm{l}")
            entries.append((f"lstm{l}.wx",
                            _uniform_init(rng, (size_in, 4 * H), size_in, self.gain)))
            entries.append((f"lstm{l}.wh",
                            _uniform_init(rng, (H, 4 * H), H, self.gain)))
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0  # forget-gate bias: remember by default
            entries.append((f"lstm{l}.b", b))
            size_in = H
        rng = substream(seed, "init", self.kind, "readout")
        entries.append(("readout.w", _uniform_init(rng, (H, self.n_classes), H, self.gain)))
        entries.append(("readout.b", np.zeros(self.n_classes)))
        return ParameterSet(entries)

    def forward(self, tape: Tape, pn: dict, windows: np.ndarray):
        """Consume the window column-by-column; logits from the last hidden
        state of the top layer. Gate order in the fused weights: i, f, g, o."""
        windows = np.asarray(windows, dtype=np.float64)
        batch, _, length = windows.shape
        H = self.hidden
        h = [tape.leaf(np.zeros((batch, H))) for _ in range(self.layers)]
        c = [tape.leaf(np.zeros((batch, H))) for _ in range(self.layers)]
        for t in range(length):
            x = tape.leaf(np.ascontiguousarray(windows[:, :, t]))
            for l in range(self.layers):
                z = ad.dual_affine(x, pn[f"lstm{l}.wx"], h[l], pn[f"lstm{l}.wh"],
                                   pn[f"lstm{l}.b"])
                i = ad.sigmoid_cols(z, 0, H)
                f = ad.sigmoid_cols(z, H, 2 * H)
                g = ad.tanh_cols(z, 2 * H, 3 * H)
                o = ad.sigmoid_cols(z, 3 * H, 4 * H)
                c[l] = ad.add(ad.mul(f, c[l]), ad.mul(i, g))
                h[l] = ad.mul(o, ad.tanh(c[l]))
                x = h[l]
        return ad.affine(h[-1], pn["readout.w"], pn["readout.b"])


def make_model(kind: str, arch: ModelArch = ModelArch(),
               lif: LifConfig = LifConfig(), in_channels: int = 64,
               window_len: int = 640, n_classes: int = N_CLASSES,
               gain: float = 1.0):
    if kind == "snn":
        return SnnModel(arch, lif, in_channels, window_len, n_classes, gain)
    if kind == "cnn":
        return CnnModel(arch, in_channels, window_len, n_classes, gain)
    if kind == "lstm":
        return LstmModel(arch, in_channels, window_len, n_classes, gain)
    raise ValueError(f"unknown model kind {kind!r}; pick snn, cnn, or lstm")


def _forward_any(model, tape, pn, windows, encoder: EncoderConfig | None):
    if model.kind == "snn":
        if encoder is None:
            encoder = EncoderConfig()
        encoded = windows if isinstance(windows, (DirectCurrent, SpikeTensor)) \
            else encode_batch(windows, encoder)
        return model.forward(tape, pn, encoded)
    return model.forward(tape, pn, windows), None


def loss_and_grads(model, params: ParameterSet, windows, labels,
                   encoder: EncoderConfig | None = None,
                   rate_penalty: float = 0.0, rate_target: float = 0.1):
    """Mean softmax cross-entropy over one batch, with tape gradients.

    Returns (loss, GradientSet, accuracy, SpikeStats-or-None). With
    rate_penalty > 0 (spiking model only) the loss adds
    penalty * sum_l max(0, layer_rate_l - rate_target)^2, discouraging
    firing above the target without rewarding silence.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty batch")
    tape = Tape()
    pn = tape.params_from(params)
    logits, stats = _forward_any(model, tape, pn, windows, encoder)
    loss = ad.softmax_cross_entropy(logits, labels)
    if rate_penalty > 0.0 and stats is not None:
        for count_node in stats.count_nodes:
            rate_node = ad.scale(ad.mean_all(count_node), 1.0 / stats.steps)
            excess = ad.relu(ad.add_const(rate_node, -rate_target))
            loss = ad.add(loss, ad.scale(ad.mul(excess, excess), rate_penalty))
    tape.mark_loss(loss)
    grads = backward(tape)
    acc = float((logits.value.argmax(axis=1) == labels).mean())
    return float(loss.value), grads, acc, stats


def evaluate(model, params: ParameterSet, windows, labels,
             encoder: EncoderConfig | None = None, batch_size: int = 64):
    """Forward-only metrics over a dataset: (mean loss, accuracy, stats)."""
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty evaluation set")
    losses, correct, parts = [], 0, []
    for lo in range(0, len(labels), batch_size):
        wb, yb = windows[lo:lo + batch_size], labels[lo:lo + batch_size]
        tape = Tape()
        pn = tape.params_from(params)
        logits, stats = _forward_any(model, tape, pn, wb, encoder)
        loss = ad.softmax_cross_entropy(logits, yb)
        losses.append(float(loss.value) * len(yb))
        correct += int((logits.value.argmax(axis=1) == yb).sum())
        if stats is not None:
            stats.count_nodes = []
            parts.append(stats)
    return (sum(losses) / len(labels), correct / len(labels),
            merge_stats(parts) if parts else None)
