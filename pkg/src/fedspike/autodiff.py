"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Everything the trainers need is built from a small set of primitives: affine
maps, 1-D convolution over the time axis, elementwise arithmetic, the usual
activations, a hard spike threshold with a fast-sigmoid surrogate derivative,
and softmax cross-entropy. Each primitive records a node on a Tape; backward
walks the tape in reverse and accumulates vector-Jacobian products into the
named parameter leaves.

Design notes:
  * values are always float64 and checked finite after every primitive
  * the tape is define-by-run: creation order is topological order
  * the spike forward is a hard 0/1 threshold; only its backward uses the
    smooth surrogate. `spike(..., soft=True)` swaps the forward for the
    fast sigmoid itself, whose exact derivative equals the surrogate formula,
    which is what finite-difference checks of full spiking models exercise.
"""

from __future__ import annotations

import hashlib
import zlib

import numpy as np

__all__ = [
    "NumericsError",
    "Node",
    "Tape",
    "ParameterSet",
    "GradientSet",
    "backward",
    "sgd_step",
    "substream",
    "save_checkpoint",
    "load_checkpoint",
    "add",
    "sub",
    "mul",
    "scale",
    "add_const",
    "add_n",
    "mean_n",
    "relu",
    "sigmoid",
    "tanh",
    "spike",
    "matmul",
    "affine",
    "conv1d",
    "reshape",
    "slice_cols",
    "mean_all",
    "softmax_cross_entropy",
    "surrogate_grad",
]


class NumericsError(Exception):
    """Shape mismatch, non-finite value, or tape misuse."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.isfinite(value).all():
        raise NumericsError(f"non-finite value produced by op '{op}'")


class Node:
    """One recorded value in the computation graph."""

    __slots__ = ("tape", "nid", "op", "parents", "value", "name", "_vjp", "_recompute")

    def __init__(self, tape, nid, op, parents, value, name=None, vjp=None, recompute=None):
        self.tape = tape
        self.nid = nid
        self.op = op
        self.parents = parents
        self.value = value
        self.name = name
        self._vjp = vjp
        self._recompute = recompute

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(#{self.nid} {self.op} shape={self.value.shape})"

    # Small amount of operator sugar: LIF/LSTM cell math reads much better.
    def __add__(self, other):
        if isinstance(other, Node):
            return add(self, other)
        return add_const(self, float(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __sub__(self, other):
        if isinstance(other, Node):
            return sub(self, other)
        return add_const(self, -float(other))

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of primitive operations for one unit of work.

    A tape and the nodes it owns are single-threaded; run independent tapes
    (one per federated client) for concurrency.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.param_nodes: list[Node] = []
        self.loss_nodes: list[Node] = []

    def _emit(self, op, parents, value, name=None, vjp=None, recompute=None):
        value = _as_f64(value)
        _check_finite(value, op)
        node = Node(self, len(self.nodes), op, tuple(parents), value,
                    name=name, vjp=vjp, recompute=recompute)
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None):
        """Record a constant or input leaf."""
        return self._emit("leaf", (), value, name=name)

    def param(self, name: str, value) -> Node:
        """Record a named parameter leaf whose gradient backward() will report."""
        node = self._emit("param", (), value, name=name)
        self.param_nodes.append(node)
        return node

    def params_from(self, params: "ParameterSet") -> dict[str, Node]:
        """Register every entry of a ParameterSet, preserving order."""
        return {name: self.param(name, params[name]) for name in params.names()}

    def mark_loss(self, node: Node) -> None:
        if node.tape is not self:
            raise NumericsError("loss node belongs to a different tape")
        self.loss_nodes.append(node)

    def replay(self) -> float:
        """Re-execute every recorded primitive and return the max abs deviation
        from the stored forward values (0.0 when reproduction is exact)."""
        values = {}
        worst = 0.0
        for node in self.nodes:
            if node._recompute is None:
                values[node.nid] = node.value
                continue
            redone = node._recompute(*(values[p.nid] for p in node.parents))
            values[node.nid] = redone
            diff = float(np.max(np.abs(redone - node.value))) if redone.size else 0.0
            worst = max(worst, diff)
        return worst


# ---------------------------------------------------------------------------
# Parameters


def _layout_fingerprint(layout) -> str:
    h = hashlib.sha256()
    for name, shape in layout:
        h.update(name.encode())
        h.update(b"\x00")
        h.update(repr(tuple(shape)).encode())
        h.update(b"\x01")
    return h.hexdigest()


class ParameterSet:
    """Ordered, immutable mapping of layer name -> float64 array.

    The layout fingerprint hashes the (name, shape) sequence; two sets are
    layout-compatible iff their fingerprints are equal. This is the only
    payload that crosses the federated client/server boundary.
    """

    def __init__(self, entries):
        self._names = []
        self._arrays = {}
        for name, arr in entries:
            if name in self._arrays:
                raise NumericsError(f"duplicate parameter name '{name}'")
            a = np.array(arr, dtype=np.float64)
            _check_finite(a, f"param '{name}'")
            a.flags.writeable = False
            self._names.append(name)
            self._arrays[name] = a
        self.fingerprint = _layout_fingerprint(self.layout())

    def names(self):
        return list(self._names)

    def layout(self):
        return [(n, self._arrays[n].shape) for n in self._names]

    def items(self):
        return [(n, self._arrays[n]) for n in self._names]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __len__(self):
        return len(self._names)

    def element_count(self) -> int:
        return int(sum(a.size for a in self._arrays.values()))

    def __eq__(self, other):
        if not isinstance(other, ParameterSet):
            return NotImplemented
        if self._names != other._names:
            return False
        return all(np.array_equal(self._arrays[n], other._arrays[n]) for n in self._names)

    def allclose(self, other, atol=0.0, rtol=0.0):
        if self.fingerprint != other.fingerprint:
            return False
        return all(np.allclose(self._arrays[n], other[n], atol=atol, rtol=rtol)
                   for n in self._names)

    def __repr__(self):
        return f"ParameterSet({len(self._names)} tensors, {self.element_count()} elements)"


# Gradients share structure and fingerprint semantics with parameters.
GradientSet = ParameterSet


def backward(tape: Tape) -> GradientSet:
    """Reverse sweep from the tape's single scalar loss.

    Returns one gradient tensor per registered parameter, in registration
    order, so the gradient layout fingerprint matches the parameter layout.
    """
    if len(tape.loss_nodes) != 1:
        raise NumericsError(f"tape must have exactly one loss output, got {len(tape.loss_nodes)}")
    loss = tape.loss_nodes[0]
    if loss.value.size != 1:
        raise NumericsError("loss output must be scalar")

    grads = {loss.nid: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[: loss.nid + 1]):
        g = grads.get(node.nid)
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None:
                continue
            acc = grads.get(parent.nid)
            grads[parent.nid] = pg if acc is None else acc + pg
        del grads[node.nid]  # free intermediates; leaf grads stay for collection

    entries = []
    for pnode in tape.param_nodes:
        g = grads.get(pnode.nid)
        if g is None:
            g = np.zeros_like(pnode.value)
        entries.append((pnode.name, g))
    return GradientSet(entries)


def sgd_step(params: ParameterSet, grads: GradientSet, lr: float) -> ParameterSet:
    """Plain SGD: p <- p - lr * g, returned as a fresh immutable set."""
    if params.fingerprint != grads.fingerprint:
        raise NumericsError("parameter/gradient layout fingerprints differ")
    return ParameterSet([(n, params[n] - lr * grads[n]) for n in params.names()])


def substream(master_seed: int, *names) -> np.random.Generator:
    """Deterministic named RNG substream of a master seed.

    Every random draw in the toolkit flows from one master seed through
    these named streams so components stay independently reproducible.
    """
    key = tuple(zlib.crc32(str(part).encode()) for part in names)
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))


# ---------------------------------------------------------------------------
# Checkpoint I/O: self-describing text, bit-exact float64 round trip.


def save_checkpoint(params: ParameterSet, path) -> None:
    with open(path, "w") as f:
        f.write("fedspike-checkpoint v1\n")
        f.write(f"fingerprint {params.fingerprint}\n")
        for name, arr in params.items():
            dims = " ".join(str(d) for d in arr.shape)
            f.write(f"tensor {name} {dims}\n")
            flat = arr.ravel()
            for start in range(0, flat.size, 8):
                f.write(" ".join(repr(v) for v in flat[start:start + 8].tolist()))
                f.write("\n")


def load_checkpoint(path) -> ParameterSet:
    with open(path) as f:
        magic = f.readline().strip()
        if magic != "fedspike-checkpoint v1":
            raise NumericsError(f"not a checkpoint file: {path}")
        fp_line = f.readline().split()
        if len(fp_line) != 2 or fp_line[0] != "fingerprint":
            raise NumericsError("checkpoint missing fingerprint line")
        entries = []
        tokens = iter([])
        line = f.readline()
        while line:
            head = line.split()
            if not head or head[0] != "tensor":
                raise NumericsError(f"malformed checkpoint tensor header: {line!r}")
            name = head[1]
            shape = tuple(int(d) for d in head[2:])
            count = int(np.prod(shape)) if shape else 1
            vals = []
            while len(vals) < count:
                row = f.readline()
                if not row:
                    raise NumericsError(f"checkpoint truncated inside tensor '{name}'")
                vals.extend(float(tok) for tok in row.split())
            if len(vals) != count:
                raise NumericsError(f"tensor '{name}' has {len(vals)} values, expected {count}")
            entries.append((name, np.array(vals, dtype=np.float64).reshape(shape)))
            line = f.readline()
    loaded = ParameterSet(entries)
    if loaded.fingerprint != fp_line[1]:
        raise NumericsError("checkpoint fingerprint does not match its tensor table")
    return loaded


# ---------------------------------------------------------------------------
# Primitives


def _same_tape(*nodes) -> Tape:
    t = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not t:
            raise NumericsError("operands recorded on different tapes")
    return t


def _require_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise NumericsError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(a: Node, b: Node) -> Node:
    t = _same_tape(a, b)
    _require_shape(a, b, "add")
    return t._emit("add", (a, b), a.value + b.value,
                   vjp=lambda g: (g, g),
                   recompute=lambda av, bv: av + bv)


def sub(a: Node, b: Node) -> Node:
    t = _same_tape(a, b)
    _require_shape(a, b, "sub")
    return t._emit("sub", (a, b), a.value - b.value,
                   vjp=lambda g: (g, -g),
                   recompute=lambda av, bv: av - bv)


def mul(a: Node, b: Node) -> Node:
    t = _same_tape(a, b)
    _require_shape(a, b, "mul")
    return t._emit("mul", (a, b), a.value * b.value,
                   vjp=lambda g: (g * b.value, g * a.value),
                   recompute=lambda av, bv: av * bv)


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape._emit("scale", (a,), a.value * c,
                        vjp=lambda g: (g * c,),
                        recompute=lambda av: av * c)


def add_const(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape._emit("add_const", (a,), a.value + c,
                        vjp=lambda g: (g,),
                        recompute=lambda av: av + c)


def add_n(nodes) -> Node:
    """Sum of k same-shape nodes in one fused node (spike-count accumulation)."""
    nodes = list(nodes)
    t = _same_tape(*nodes)
    for n in nodes[1:]:
        _require_shape(nodes[0], n, "add_n")
    out = nodes[0].value.copy()
    for n in nodes[1:]:
        out += n.value
    k = len(nodes)

    def recompute(*vals):
        acc = vals[0].copy()
        for v in vals[1:]:
            acc += v
        return acc

    return t._emit("add_n", tuple(nodes), out,
                   vjp=lambda g: (g,) * k,
                   recompute=recompute)


def mean_n(nodes) -> Node:
    """Temporal mean of a sequence of same-shape nodes."""
    nodes = list(nodes)
    return scale(add_n(nodes), 1.0 / len(nodes)) if len(nodes) > 1 else nodes[0]


def relu(a: Node) -> Node:
    mask = a.value > 0
    return a.tape._emit("relu", (a,), np.where(mask, a.value, 0.0),
                        vjp=lambda g: (g * mask,),
                        recompute=lambda av: np.where(av > 0, av, 0.0))


def sigmoid(a: Node) -> Node:
    out = _sigmoid(a.value)
    return a.tape._emit("sigmoid", (a,), out,
                        vjp=lambda g: (g * out * (1.0 - out),),
                        recompute=_sigmoid)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return a.tape._emit("tanh", (a,), out,
                        vjp=lambda g: (g * (1.0 - out * out),),
                        recompute=np.tanh)


def surrogate_grad(v: np.ndarray, theta: float, slope: float) -> np.ndarray:
    """Fast-sigmoid surrogate derivative of the spike threshold:
    1 / (slope*|v - theta| + 1)^2."""
    return 1.0 / (slope * np.abs(v - theta) + 1.0) ** 2


def spike(a: Node, theta: float, slope: float, soft: bool = False) -> Node:
    """Hard threshold [v >= theta] with surrogate backward.

    With soft=True the forward becomes the fast sigmoid
    (v-theta)/(1 + slope*|v-theta|), whose exact derivative is the surrogate
    formula; that variant is truly differentiable and finite-difference
    checkable. Training always uses the hard forward.
    """
    theta = float(theta)
    slope = float(slope)
    if soft:
        def fwd(av):
            d = av - theta
            return d / (1.0 + slope * np.abs(d))
    else:
        def fwd(av):
            return (av >= theta).astype(np.float64)
    sg = surrogate_grad(a.value, theta, slope)
    op = "spike_soft" if soft else "spike"
    return a.tape._emit(op, (a,), fwd(a.value),
                        vjp=lambda g: (g * sg,),
                        recompute=fwd)


def matmul(a: Node, b: Node) -> Node:
    t = _same_tape(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise NumericsError(f"matmul: incompatible shapes {a.value.shape} @ {b.value.shape}")
    return t._emit("matmul", (a, b), a.value @ b.value,
                   vjp=lambda g: (g @ b.value.T, a.value.T @ g),
                   recompute=lambda av, bv: av @ bv)


def affine(x: Node, w: Node, b: Node) -> Node:
    """y = x @ w + b for x (batch, in), w (in, out), b (out,)."""
    t = _same_tape(x, w, b)
    if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]:
        raise NumericsError(f"affine: incompatible shapes {x.value.shape} @ {w.value.shape}")
    if b.value.shape != (w.value.shape[1],):
        raise NumericsError(f"affine: bias shape {b.value.shape} != ({w.value.shape[1]},)")
    return t._emit("affine", (x, w, b), x.value @ w.value + b.value,
                   vjp=lambda g: (g @ w.value.T, x.value.T @ g, g.sum(axis=0)),
                   recompute=lambda xv, wv, bv: xv @ wv + bv)


def _conv1d_forward(x, w, b, stride):
    B, cin, L = x.shape
    cout, _, K = w.shape
    lout = (L - K) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, K, axis=2)[:, :, ::stride, :]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, lout, cin * K)
    out = cols @ w.reshape(cout, cin * K).T + b
    return np.ascontiguousarray(out.transpose(0, 2, 1)), cols


def conv1d(x: Node, w: Node, b: Node, stride: int = 1) -> Node:
    """1-D convolution over the last (time) axis with channel mixing.

    x: (batch, in_ch, length), w: (out_ch, in_ch, kernel), b: (out_ch,).
    Valid padding; output length (L - K)//stride + 1.
    """
    t = _same_tape(x, w, b)
    stride = int(stride)
    if x.value.ndim != 3 or w.value.ndim != 3:
        raise NumericsError("conv1d: x must be (B, C, L) and w (O, C, K)")
    B, cin, L = x.value.shape
    cout, cin_w, K = w.value.shape
    if cin != cin_w:
        raise NumericsError(f"conv1d: channel mismatch {cin} vs {cin_w}")
    if K > L:
        raise NumericsError(f"conv1d: kernel {K} longer than input {L}")
    if stride < 1:
        raise NumericsError("conv1d: stride must be >= 1")
    if b.value.shape != (cout,):
        raise NumericsError(f"conv1d: bias shape {b.value.shape} != ({cout},)")

    out, cols = _conv1d_forward(x.value, w.value, b.value, stride)
    lout = out.shape[2]
    wmat = w.value.reshape(cout, cin * K)

    def vjp(g):
        gt = g.transpose(0, 2, 1)                      # (B, Lout, Cout)
        gw = np.einsum("blo,blf->of", gt, cols).reshape(cout, cin, K)
        gb = gt.sum(axis=(0, 1))
        gcols = gt @ wmat                              # (B, Lout, Cin*K)
        gwin = gcols.reshape(B, lout, cin, K)
        gx = np.zeros((B, cin, L))
        for p in range(lout):
            gx[:, :, p * stride:p * stride + K] += gwin[:, p]
        return gx, gw, gb

    return t._emit("conv1d", (x, w, b), out,
                   vjp=vjp,
                   recompute=lambda xv, wv, bv: _conv1d_forward(xv, wv, bv, stride)[0])


def reshape(a: Node, shape) -> Node:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.value.size:
        raise NumericsError(f"reshape: cannot view {a.value.shape} as {shape}")
    src = a.value.shape
    return a.tape._emit("reshape", (a,), a.value.reshape(shape),
                        vjp=lambda g: (g.reshape(src),),
                        recompute=lambda av: av.reshape(shape))


def dual_affine(x: Node, wx: Node, h: Node, wh: Node, b: Node) -> Node:
    """y = x @ wx + h @ wh + b, fused into one node (recurrent-cell input).

    Equivalent to add(matmul(x, wx), affine(h, wh, b)) but stores one output
    array instead of three; recurrent nets emit thousands of these per batch.
    """
    t = _same_tape(x, wx, h, wh, b)
    if (x.value.ndim != 2 or wx.value.ndim != 2 or h.value.ndim != 2
            or wh.value.ndim != 2 or x.value.shape[1] != wx.value.shape[0]
            or h.value.shape[1] != wh.value.shape[0]
            or x.value.shape[0] != h.value.shape[0]
            or wx.value.shape[1] != wh.value.shape[1]):
        raise NumericsError(
            f"dual_affine: incompatible shapes {x.value.shape} @ {wx.value.shape} "
            f"+ {h.value.shape} @ {wh.value.shape}")
    if b.value.shape != (wx.value.shape[1],):
        raise NumericsError(f"dual_affine: bias shape {b.value.shape} != "
                            f"({wx.value.shape[1]},)")

    def vjp(g):
        return (g @ wx.value.T, x.value.T @ g,
                g @ wh.value.T, h.value.T @ g, g.sum(axis=0))

    return t._emit("dual_affine", (x, wx, h, wh, b),
                   x.value @ wx.value + h.value @ wh.value + b.value,
                   vjp=vjp,
                   recompute=lambda xv, wxv, hv, whv, bv: xv @ wxv + hv @ whv + bv)


def _act_cols(a: Node, start: int, stop: int, kind: str) -> Node:
    """Activation of a column slice fused into one node (gate extraction)."""
    if a.value.ndim != 2:
        raise NumericsError(f"{kind}_cols expects a 2-D node")
    n = a.value.shape[1]
    if not (0 <= start < stop <= n):
        raise NumericsError(f"{kind}_cols: [{start}:{stop}] out of bounds for width {n}")
    fn = _sigmoid if kind == "sigmoid" else np.tanh
    out = fn(a.value[:, start:stop])

    def vjp(g):
        local = out * (1.0 - out) if kind == "sigmoid" else 1.0 - out * out
        gx = np.zeros_like(a.value)
        gx[:, start:stop] = g * local
        return (gx,)

    return a.tape._emit(f"{kind}_cols", (a,), out,
                        vjp=vjp,
                        recompute=lambda av: fn(av[:, start:stop]))


def sigmoid_cols(a: Node, start: int, stop: int) -> Node:
    return _act_cols(a, start, stop, "sigmoid")


def tanh_cols(a: Node, start: int, stop: int) -> Node:
    return _act_cols(a, start, stop, "tanh")


def slice_cols(a: Node, start: int, stop: int) -> Node:
    """Column slice of a 2-D node (gate splitting in recurrent cells)."""
    if a.value.ndim != 2:
        raise NumericsError("slice_cols expects a 2-D node")
    n = a.value.shape[1]
    if not (0 <= start < stop <= n):
        raise NumericsError(f"slice_cols: [{start}:{stop}] out of bounds for width {n}")

    def vjp(g):
        gx = np.zeros_like(a.value)
        gx[:, start:stop] = g
        return (gx,)

    return a.tape._emit("slice_cols", (a,), a.value[:, start:stop].copy(),
                        vjp=vjp,
                        recompute=lambda av: av[:, start:stop].copy())


def mean_all(a: Node) -> Node:
    n = a.value.size
    return a.tape._emit("mean_all", (a,), np.array(a.value.mean()),
                        vjp=lambda g: (np.full(a.value.shape, float(g) / n),),
                        recompute=lambda av: np.array(av.mean()))


def softmax_cross_entropy(logits: Node, labels) -> Node:
    """Mean cross-entropy between softmax(logits) and integer labels.

    logits: (batch, classes); labels: int array (batch,). Scalar output.
    """
    labels = np.asarray(labels)
    z = logits.value
    if z.ndim != 2:
        raise NumericsError("softmax_cross_entropy expects (batch, classes) logits")
    B = z.shape[0]
    if labels.shape != (B,):
        raise NumericsError(f"labels shape {labels.shape} != ({B},)")

    def fwd(zv):
        m = zv.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(zv - m).sum(axis=1))
        return np.array((lse - zv[np.arange(B), labels]).mean())

    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        gz = p.copy()
        gz[np.arange(B), labels] -= 1.0
        return (gz * (float(g) / B),)

    return logits.tape._emit("softmax_xent", (logits,), fwd(z), vjp=vjp, recompute=fwd)
