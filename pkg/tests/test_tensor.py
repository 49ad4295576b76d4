import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avturn import tensor as T
from avturn.tensor import ShapeError, Tensor, backward, grad_check


def rng(seed=0):
    return np.random.default_rng(seed)


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_matmul_identity():
    x = rng().normal(size=(3, 5))
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(x)).data, x)


def test_sort_with_permutation_example():
    vals, perm = T.sort_with_permutation(Tensor([3.0, 1.0, 2.0]))
    np.testing.assert_array_equal(vals.data, [1, 2, 3])
    np.testing.assert_array_equal(perm, [1, 2, 0])


def test_backward_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_accumulates_until_zeroed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward((x * x).sum())
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])


def test_backward_constant_root_writes_nothing():
    c = Tensor(3.0)
    x = Tensor([1.0], requires_grad=False)
    backward(c * 2.0)
    assert x.grad is None and c.grad is None


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_diamond_graph_visits_each_node_once():
    x = Tensor([0.5, -1.5], requires_grad=True)
    y = T.tanh(x)
    z = (y * y + y * 3.0).sum()
    backward(z)
    t = np.tanh(x.data)
    np.testing.assert_allclose(x.grad, (2 * t + 3) * (1 - t * t))


def test_tape_is_topological():
    x = Tensor(rng().normal(size=4), requires_grad=True)
    y = T.exp(x)
    root = (y * T.sigmoid(y)).sum()
    tape = T.Tape.record(root)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for n in tape.nodes:
        for p in n._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]
    assert len(pos) == len(tape.nodes)


def test_layer_norm_then_sum_matches_fd():
    x = rng(1).normal(size=(4, 8))
    g, b = np.ones(8), np.zeros(8)
    rep = grad_check(lambda t: T.layer_norm(t, g, b).sum(), x, eps=1e-5, tol=1e-4)
    assert rep.passed, rep.max_rel_error


def test_grad_check_linear_is_exact():
    rep = grad_check(lambda t: t.sum(), rng().normal(size=7))
    assert rep.max_rel_error == 0.0 or rep.max_rel_error < 1e-9


def test_grad_check_sigmoid():
    rep = grad_check(lambda t: T.sigmoid(t).sum(), rng(2).normal(size=10), tol=1e-4)
    assert rep.passed


def test_grad_check_reports_non_finite():
    with np.errstate(invalid="ignore"):
        rep = grad_check(lambda t: T.log(t).sum(), np.array([-1.0, 1.0]))
    assert not rep.passed and rep.error


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError) as ei:
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    assert "matmul" in str(ei.value) and "(2, 3)" in str(ei.value) and "(4, 2)" in str(ei.value)
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))
    with pytest.raises(ShapeError):
        T.softmax(Tensor(np.ones((2, 0))), axis=-1)


def test_leading_batch_broadcast_only():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.arange(3.0))
    np.testing.assert_array_equal((a + b).data[1], [1, 2, 3])
    with pytest.raises(ShapeError):
        a + Tensor(np.ones((2, 1)))


# -- finite-difference checks for every primitive --------------------------

W_RAND = rng(99).normal(size=64)


def _weighted(t: Tensor) -> Tensor:
    flat = t.reshape(-1)
    w = W_RAND[: flat.shape[0]] if flat.shape[0] <= 64 else rng(5).normal(size=flat.shape[0])
    return (flat * w).sum()


def _jitter_off_zero(x, margin=0.05):
    return np.where(np.abs(x) < margin, x + np.sign(x + 1e-12) * margin * 2, x)


CASES = {
    "add": (lambda t: _weighted(t + Tensor(np.arange(6.0).reshape(2, 3))), (2, 3)),
    "add_bias": (lambda t: _weighted(Tensor(np.ones((4, 3))) + t), (3,)),
    "sub": (lambda t: _weighted(Tensor(np.ones((2, 3))) - t), (2, 3)),
    "mul": (lambda t: _weighted(t * t * 0.7), (2, 3)),
    "div": (lambda t: _weighted(Tensor(np.ones((2, 3))) / (t * t + 1.0)), (2, 3)),
    "scalar": (lambda t: _weighted(2.0 * t - 1.0 + t / 3.0), (5,)),
    "power": (lambda t: _weighted((t * t + 0.5) ** 1.5), (5,)),
    "relu": (lambda t: _weighted(T.relu(t)), (6,)),
    "sigmoid": (lambda t: _weighted(T.sigmoid(t)), (6,)),
    "tanh": (lambda t: _weighted(T.tanh(t)), (6,)),
    "cos_sin": (lambda t: _weighted(T.cos(t) * 2.0 + T.sin(t)), (6,)),
    "exp": (lambda t: _weighted(T.exp(t)), (6,)),
    "log": (lambda t: _weighted(T.log(t * t + 0.3)), (6,)),
    "log1p": (lambda t: _weighted(T.log1p(t * t)), (6,)),
    "sqrt": (lambda t: _weighted(T.sqrt(t * t + 0.3)), (6,)),
    "abs": (lambda t: _weighted(T.abs(t)), (6,)),
    "softmax": (lambda t: _weighted(T.softmax(t, axis=-1)), (3, 4)),
    "softmax_axis0": (lambda t: _weighted(T.softmax(t, axis=0)), (3, 4)),
    "log_softmax": (lambda t: _weighted(T.log_softmax(t, axis=-1)), (3, 4)),
    "layer_norm": (lambda t: _weighted(T.layer_norm(t, np.linspace(0.5, 1.5, 8), np.ones(8))), (4, 8)),
    "layer_norm_gamma": (lambda t: _weighted(T.layer_norm(Tensor(rng(3).normal(size=(4, 5))), t, np.zeros(5))), (5,)),
    "layer_norm_beta": (lambda t: _weighted(T.layer_norm(Tensor(rng(3).normal(size=(4, 5))), np.ones(5), t) ** 2), (5,)),
    "matmul_left": (lambda t: _weighted(t @ Tensor(rng(4).normal(size=(4, 3)))), (2, 4)),
    "matmul_right": (lambda t: _weighted(Tensor(rng(4).normal(size=(2, 4))) @ t), (4, 3)),
    "bmm_left": (lambda t: _weighted(t @ Tensor(rng(4).normal(size=(2, 4, 3)))), (2, 3, 4)),
    "bmm_right": (lambda t: _weighted(Tensor(rng(4).normal(size=(2, 3, 4))) @ t), (2, 4, 3)),
    "bmm_shared_weight": (lambda t: _weighted(Tensor(rng(4).normal(size=(2, 3, 4))) @ t), (4, 2)),
    "sum_axis": (lambda t: _weighted(t.sum(axis=1) ** 2), (3, 4)),
    "mean_keepdims": (lambda t: _weighted(t.mean(axis=-1, keepdims=True) ** 2) + _weighted(t.mean(axis=0) ** 3), (3, 4)),
    "transpose": (lambda t: _weighted(t.transpose(1, 0, 2) * Tensor(rng(6).normal(size=(3, 2, 4)))), (2, 3, 4)),
    "reshape": (lambda t: _weighted(t.reshape(6, 2) ** 2), (3, 4)),
    "slice": (lambda t: _weighted(t[1:, ::2] ** 2), (3, 4)),
    "fancy_index": (lambda t: _weighted(t[[0, 2, 2], [1, 1, 3]] ** 2), (3, 4)),
    "concat": (lambda t: _weighted(T.concat([t, t * 2.0], axis=1) ** 2), (2, 3)),
    "stack": (lambda t: _weighted(T.stack([t, t ** 2], axis=1)), (2, 3)),
    "sort": (lambda t: _weighted(T.sort_with_permutation(t, axis=-1)[0] ** 2), (2, 5)),
    "conv2d_input": (lambda t: _weighted(T.conv2d(t, rng(7).normal(size=(3, 3, 2, 3)), np.ones(3), 1, 1)), (5, 4, 2)),
    "conv2d_weight": (lambda t: _weighted(T.conv2d(Tensor(rng(8).normal(size=(2, 5, 4, 2))), t, None, 2, 1)), (3, 3, 2, 2)),
    "conv2d_bias": (lambda t: _weighted(T.conv2d(Tensor(rng(8).normal(size=(5, 4, 2))), rng(7).normal(size=(3, 3, 2, 3)), t, 1, 0) ** 2), (3,)),
    "conv3d_input": (lambda t: _weighted(T.conv3d(t, rng(9).normal(size=(3, 3, 3, 1, 2)), None, 1, 1)), (3, 4, 4, 1)),
    "conv3d_weight": (lambda t: _weighted(T.conv3d(Tensor(rng(10).normal(size=(2, 3, 4, 4, 2))), t, None, (1, 2, 2), 1)), (3, 3, 3, 2, 2)),
    "max_pool2d": (lambda t: _weighted(T.max_pool(t, (2, 2))), (4, 4, 2)),
    "max_pool3d_crop": (lambda t: _weighted(T.max_pool(t, (1, 2, 2), crop=True)), (2, 5, 4, 1)),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients_match_finite_differences(name):
    f, shape = CASES[name]
    x = rng(zlib.crc32(name.encode()) % 1000).normal(size=shape)
    if name in ("relu", "abs"):
        x = _jitter_off_zero(x)
    rep = grad_check(f, x, eps=1e-5, tol=1e-4)
    assert rep.passed, (name, rep.max_rel_error)


def test_conv2d_matches_direct_loop():
    x = rng(11).normal(size=(5, 6, 2))
    w = rng(12).normal(size=(3, 3, 2, 4))
    out = T.conv2d(Tensor(x), Tensor(w), None, stride=1, padding=1).data
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    ref = np.zeros((5, 6, 4))
    for i in range(5):
        for j in range(6):
            ref[i, j] = np.einsum("abc,abcd->d", xp[i:i + 3, j:j + 3], w)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_max_pool_rejects_indivisible():
    with pytest.raises(ShapeError):
        T.max_pool(Tensor(np.ones((5, 4, 1))), (2, 2))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(x, c):
    p = T.softmax(Tensor(x)).data
    assert abs(p.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(T.softmax(Tensor(x + c)).data, p, atol=1e-9)


def test_bit_identical_repeat():
    def run():
        r = np.random.default_rng(123)
        x = Tensor(r.normal(size=(2, 6, 6, 1)), requires_grad=True)
        w = Tensor(r.normal(size=(3, 3, 1, 2)), requires_grad=True)
        y = T.max_pool(T.relu(T.conv2d(x, w, None, 1, 1)), (2, 2))
        loss = T.softmax(y.reshape(2, -1)).sum() + y.mean()
        backward(loss)
        return loss.data.tobytes() + x.grad.tobytes() + w.grad.tobytes()
    assert run() == run()


def test_checkpoint_roundtrip(tmp_path):
    params = {"a.weight": rng().normal(size=(3, 2)), "b": np.array(1.5), "c": np.zeros((2, 0, 1))}
    T.save_checkpoint(tmp_path / "m.avtt", params, {"step": 3})
    loaded, meta = T.load_checkpoint(tmp_path / "m.avtt")
    assert meta == {"step": 3}
    for k in params:
        np.testing.assert_array_equal(loaded[k], params[k])
    raw = (tmp_path / "m.avtt").read_bytes()
    assert raw[:4] == b"AVTT" and int.from_bytes(raw[4:8], "little") == 1


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE\x01\x00\x00\x00")
    with pytest.raises(T.CheckpointError):
        T.load_checkpoint(tmp_path / "x")
