import numpy as np
import pytest

from fedspike import autodiff as ad
from fedspike.autodiff import (
    GradientSet,
    NumericsError,
    ParameterSet,
    Tape,
    backward,
    sgd_step,
    substream,
)
from gradcheck import gradcheck
from oracles import finite_difference, mlp_forward, relative_error, softmax_xent_reference


def test_identity_network_passthrough():
    tape = Tape()
    x = tape.leaf([1.5, -2.0, 3.25])
    assert np.array_equal(x.value, np.array([1.5, -2.0, 3.25]))


def test_single_affine_layer_forced_value():
    # W=[[2]], b=[1], input [3] -> 2*3+1 = 7
    tape = Tape()
    x = tape.leaf([[3.0]])
    w = tape.param("w", [[2.0]])
    b = tape.param("b", [1.0])
    y = ad.affine(x, w, b)
    assert y.value.tolist() == [[7.0]]


def test_two_layer_mlp_matches_straight_line_oracle():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(5, 6))
    w1, b1 = rng.normal(size=(6, 8)), rng.normal(size=8)
    w2, b2 = rng.normal(size=(8, 3)), rng.normal(size=3)

    tape = Tape()
    xn = tape.leaf(x)
    h = ad.tanh(ad.affine(xn, tape.param("w1", w1), tape.param("b1", b1)))
    y = ad.affine(h, tape.param("w2", w2), tape.param("b2", b2))

    expect = mlp_forward(x, [(w1, b1, "tanh"), (w2, b2, "linear")])
    assert np.max(np.abs(y.value - expect)) < 1e-12


def test_forward_deterministic_bit_identical():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 7))
    w = rng.normal(size=(7, 5))
    b = rng.normal(size=5)

    outs = []
    for _ in range(2):
        tape = Tape()
        y = ad.relu(ad.affine(tape.leaf(x), tape.param("w", w), tape.param("b", b)))
        outs.append(y.value)
    assert np.array_equal(outs[0], outs[1])


def test_backward_scalar_passthrough_gradient_one():
    tape = Tape()
    p = tape.param("p", 2.5)
    tape.mark_loss(p)
    grads = backward(tape)
    assert grads["p"] == pytest.approx(1.0)


def test_backward_sum_wx_matches_finite_differences():
    rng = np.random.default_rng(7)
    w0 = rng.normal(size=(4, 3))
    x = rng.normal(size=(2, 4))

    def loss_val(wmat):
        return float((x @ wmat).sum())

    tape = Tape()
    w = tape.param("w", w0)
    y = ad.matmul(tape.leaf(x), w)
    loss = ad.scale(ad.mean_all(y), y.value.size)
    tape.mark_loss(loss)
    grads = backward(tape)

    idxs = list(range(w0.size))
    fd = finite_difference(loss_val, w0, idxs, step=1e-5)
    rel = relative_error(grads["w"].ravel(), fd)
    assert rel.max() < 1e-6


def test_backward_requires_single_scalar_loss():
    tape = Tape()
    p = tape.param("p", [1.0, 2.0])
    with pytest.raises(NumericsError):
        backward(tape)  # zero losses
    tape.mark_loss(p)
    with pytest.raises(NumericsError):
        backward(tape)  # non-scalar
    tape2 = Tape()
    a = tape2.param("a", 1.0)
    tape2.mark_loss(a)
    tape2.mark_loss(ad.scale(a, 2.0))
    with pytest.raises(NumericsError):
        backward(tape2)  # two losses


def test_gradient_layout_matches_parameter_layout():
    params = ParameterSet([("w", np.ones((3, 2))), ("b", np.zeros(2))])
    tape = Tape()
    nodes = tape.params_from(params)
    y = ad.affine(tape.leaf(np.ones((1, 3))), nodes["w"], nodes["b"])
    tape.mark_loss(ad.mean_all(y))
    grads = backward(tape)
    assert grads.fingerprint == params.fingerprint


def test_unused_parameter_gets_zero_gradient():
    tape = Tape()
    used = tape.param("used", 3.0)
    tape.param("unused", np.ones(4))
    tape.mark_loss(ad.scale(used, 2.0))
    grads = backward(tape)
    assert grads["used"] == pytest.approx(2.0)
    assert np.array_equal(grads["unused"], np.zeros(4))


PRIMITIVES = [
    ("add", lambda t, p: ad.mean_all(ad.add(p["a"], p["b"])), [("a", (3, 4)), ("b", (3, 4))]),
    ("sub", lambda t, p: ad.mean_all(ad.sub(p["a"], p["b"])), [("a", (3, 4)), ("b", (3, 4))]),
    ("mul", lambda t, p: ad.mean_all(ad.mul(p["a"], p["b"])), [("a", (3, 4)), ("b", (3, 4))]),
    ("scale", lambda t, p: ad.mean_all(ad.scale(p["a"], -1.7)), [("a", (5,))]),
    ("relu", lambda t, p: ad.mean_all(ad.relu(p["a"])), [("a", (4, 4))]),
    ("sigmoid", lambda t, p: ad.mean_all(ad.sigmoid(p["a"])), [("a", (4, 4))]),
    ("tanh", lambda t, p: ad.mean_all(ad.tanh(p["a"])), [("a", (4, 4))]),
    ("spike_soft", lambda t, p: ad.mean_all(ad.spike(p["a"], 1.0, 25.0, soft=True)), [("a", (4, 4))]),
    ("matmul", lambda t, p: ad.mean_all(ad.matmul(p["a"], p["b"])), [("a", (3, 4)), ("b", (4, 2))]),
    ("affine", lambda t, p: ad.mean_all(ad.affine(p["x"], p["w"], p["b"])),
     [("x", (3, 4)), ("w", (4, 2)), ("b", (2,))]),
    ("conv1d", lambda t, p: ad.mean_all(ad.conv1d(p["x"], p["w"], p["b"], stride=2)),
     [("x", (2, 3, 12)), ("w", (5, 3, 4)), ("b", (5,))]),
    ("reshape", lambda t, p: ad.mean_all(ad.reshape(ad.mul(p["a"], p["a"]), (12,))), [("a", (3, 4))]),
    ("slice_cols", lambda t, p: ad.mean_all(ad.slice_cols(p["a"], 1, 3)), [("a", (4, 5))]),
    ("add_n", lambda t, p: ad.mean_all(ad.add_n([p["a"], p["b"], ad.mul(p["a"], p["b"])])),
     [("a", (2, 3)), ("b", (2, 3))]),
    ("mean_n", lambda t, p: ad.mean_n([ad.mean_all(p["a"]), ad.mean_all(p["b"])]),
     [("a", (2, 3)), ("b", (2, 3))]),
    ("dual_affine", lambda t, p: ad.mean_all(
        ad.dual_affine(p["x"], p["wx"], p["h"], p["wh"], p["b"])),
     [("x", (3, 4)), ("wx", (4, 6)), ("h", (3, 5)), ("wh", (5, 6)), ("b", (6,))]),
    ("sigmoid_cols", lambda t, p: ad.mean_all(ad.sigmoid_cols(p["a"], 1, 4)),
     [("a", (3, 6))]),
    ("tanh_cols", lambda t, p: ad.mean_all(ad.tanh_cols(p["a"], 2, 5)),
     [("a", (3, 6))]),
]


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("name,build,shapes", PRIMITIVES, ids=[p[0] for p in PRIMITIVES])
def test_primitive_gradients_match_finite_differences(name, build, shapes, seed):
    rng = np.random.default_rng(1000 + seed)
    params = ParameterSet([(n, rng.normal(size=s)) for n, s in shapes])

    def value(p):
        tape = Tape()
        nodes = tape.params_from(p)
        return float(build(tape, nodes).value)

    def value_and_grad(p):
        tape = Tape()
        nodes = tape.params_from(p)
        loss = build(tape, nodes)
        tape.mark_loss(loss)
        return float(loss.value), backward(tape)

    gradcheck(value, value_and_grad, params, rng, samples_per_tensor=4)


def test_softmax_cross_entropy_value_and_gradient():
    rng = np.random.default_rng(5)
    logits0 = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, size=6)

    tape = Tape()
    z = tape.param("z", logits0)
    loss = ad.softmax_cross_entropy(z, labels)
    tape.mark_loss(loss)
    assert float(loss.value) == pytest.approx(softmax_xent_reference(logits0, labels), abs=1e-12)

    grads = backward(tape)
    fd = finite_difference(
        lambda zz: softmax_xent_reference(zz, labels), logits0, range(logits0.size))
    assert relative_error(grads["z"].ravel(), fd).max() < 1e-6


def test_spike_forward_is_hard_binary_and_backward_is_surrogate():
    rng = np.random.default_rng(9)
    v0 = rng.normal(size=(50,)) * 2.0
    tape = Tape()
    v = tape.param("v", v0)
    s = ad.spike(v, 1.0, 25.0)
    assert set(np.unique(s.value)).issubset({0.0, 1.0})
    assert np.array_equal(s.value, (v0 >= 1.0).astype(float))

    tape.mark_loss(ad.scale(ad.mean_all(s), s.value.size))
    grads = backward(tape)
    expect = 1.0 / (25.0 * np.abs(v0 - 1.0) + 1.0) ** 2
    assert np.max(np.abs(grads["v"] - expect)) < 1e-15


def test_tape_topological_order_and_exact_replay():
    rng = np.random.default_rng(21)
    tape = Tape()
    x = tape.leaf(rng.normal(size=(3, 6)))
    w = tape.param("w", rng.normal(size=(6, 4)))
    b = tape.param("b", rng.normal(size=4))
    h = ad.relu(ad.affine(x, w, b))
    y = ad.softmax_cross_entropy(h, np.array([0, 1, 2]))
    tape.mark_loss(y)

    for node in tape.nodes:
        for parent in node.parents:
            assert parent.nid < node.nid
    assert tape.replay() == 0.0


def test_operations_reject_shape_mismatch():
    tape = Tape()
    a = tape.leaf(np.ones((2, 3)))
    b = tape.leaf(np.ones((3, 2)))
    with pytest.raises(NumericsError):
        ad.add(a, b)
    with pytest.raises(NumericsError):
        ad.matmul(a, a)
    with pytest.raises(NumericsError):
        ad.conv1d(tape.leaf(np.ones((1, 2, 4))), tape.leaf(np.ones((3, 5, 2))), tape.leaf(np.ones(3)))


def test_non_finite_values_rejected():
    tape = Tape()
    with pytest.raises(NumericsError):
        tape.leaf(np.array([1.0, np.inf]))
    a = tape.leaf(np.array([1e308]))
    with np.errstate(over="ignore"), pytest.raises(NumericsError):
        ad.mul(a, a)


def test_conv1d_matches_loop_oracle():
    from oracles import conv1d_loops

    rng = np.random.default_rng(17)
    x = rng.normal(size=(2, 3, 11))
    w = rng.normal(size=(4, 3, 3))
    b = rng.normal(size=4)
    for stride in (1, 2, 3):
        tape = Tape()
        y = ad.conv1d(tape.leaf(x), tape.leaf(w), tape.leaf(b), stride=stride)
        assert np.max(np.abs(y.value - conv1d_loops(x, w, b, stride))) < 1e-12


# --- sgd_step -------------------------------------------------------------


def test_sgd_step_zero_gradient_identity():
    p = ParameterSet([("p", [1.0])])
    g = GradientSet([("p", [0.0])])
    assert sgd_step(p, g, 0.01)["p"].tolist() == [1.0]


def test_sgd_step_forced_arithmetic():
    p = ParameterSet([("p", [1.0])])
    g = GradientSet([("p", [2.0])])
    assert sgd_step(p, g, 0.01)["p"].tolist() == [0.98]

    p2 = ParameterSet([("p", [1.0, -1.0])])
    g2 = GradientSet([("p", [0.5, 0.5])])
    assert sgd_step(p2, g2, 0.1)["p"].tolist() == [0.95, -1.05]


def test_sgd_step_fingerprint_mismatch_rejected():
    p = ParameterSet([("p", [1.0])])
    g = GradientSet([("q", [1.0])])
    with pytest.raises(NumericsError):
        sgd_step(p, g, 0.1)


# --- ParameterSet ---------------------------------------------------------


def test_fingerprints_equal_iff_layouts_equal():
    a = ParameterSet([("w", np.zeros((2, 3))), ("b", np.zeros(3))])
    b = ParameterSet([("w", np.ones((2, 3))), ("b", np.ones(3))])
    c = ParameterSet([("w", np.zeros((3, 2))), ("b", np.zeros(3))])
    d = ParameterSet([("w2", np.zeros((2, 3))), ("b", np.zeros(3))])
    assert a.fingerprint == b.fingerprint
    assert a.fingerprint != c.fingerprint
    assert a.fingerprint != d.fingerprint


def test_parameter_set_rejects_duplicates_and_is_immutable():
    with pytest.raises(NumericsError):
        ParameterSet([("w", [1.0]), ("w", [2.0])])
    p = ParameterSet([("w", [1.0])])
    with pytest.raises(ValueError):
        p["w"][0] = 5.0


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(31)
    params = ParameterSet([
        ("conv0.w", rng.normal(size=(4, 3, 5)) * 1e-3),
        ("conv0.b", rng.normal(size=4) * 1e6),
        ("readout.w", rng.normal(size=(7, 2))),
        ("scalarish", rng.normal(size=1)),
    ])
    path = tmp_path / "model.ckpt"
    ad.save_checkpoint(params, path)
    loaded = ad.load_checkpoint(path)
    assert loaded == params
    assert loaded.fingerprint == params.fingerprint


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(NumericsError):
        ad.load_checkpoint(path)


def test_substream_determinism_and_independence():
    a1 = substream(42, "split").normal(size=4)
    a2 = substream(42, "split").normal(size=4)
    b = substream(42, "shuffle").normal(size=4)
    c = substream(43, "split").normal(size=4)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)
