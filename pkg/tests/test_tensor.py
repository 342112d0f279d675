import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import max_grad_error
from seqframe import tensor as tn
from seqframe.nested_map import NestedMap
from seqframe.tensor import Tensor


def t64(x):
    return Tensor(np.asarray(x, np.float64))


def test_add_and_scalar_broadcast():
    assert np.array_equal(tn.add(t64([1, 2]), t64([3, 4])).value, [4, 6])
    assert np.array_equal((t64([1, 2]) + 1.0).value, [2, 3])
    assert np.array_equal((2.0 * t64([1, 2])).value, [2, 4])


def test_general_broadcast_is_rejected():
    with pytest.raises(tn.ShapeMismatchError):
        tn.add(t64(np.ones((2, 3))), t64(np.ones(3)))
    with pytest.raises(tn.DTypeMismatchError):
        tn.add(t64([1.0]), Tensor(np.ones(1, np.float32)))


def test_tanh_of_zero():
    assert np.array_equal(tn.tanh(t64(np.zeros((2, 2)))).value, np.zeros((2, 2)))


def test_matmul_identity():
    x = t64(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(tn.matmul(t64(np.eye(2)), x).value, x.value)
    with pytest.raises(tn.ShapeMismatchError):
        tn.matmul(x, x)


def test_softmax_rows_normalized(rng):
    s = tn.softmax(Tensor(rng.normal(size=(5, 7)).astype(np.float32))).value
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_cross_entropy_of_uniform_logits():
    total, weight = tn.cross_entropy(t64(np.zeros((3, 4))), [0, 1, 3], [1.0, 1.0, 1.0])
    assert float(total.value) / float(weight.value) == pytest.approx(math.log(4), abs=1e-12)
    assert math.log(4) == pytest.approx(1.386294, abs=1e-6)


def test_cross_entropy_zero_weights():
    total, weight = tn.cross_entropy(t64(np.zeros((2, 4))), [0, 1], [0.0, 0.0])
    assert float(total.value) == 0.0 and float(weight.value) == 0.0


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(tn.IndexOutOfRangeError):
        tn.cross_entropy(t64(np.zeros((2, 4))), [0, 4], [1.0, 1.0])


def test_linear_loss_gradient_is_input():
    x = np.array([1.0, -2.0, 3.0])
    _, g = tn.value_and_grad(lambda p: tn.reduce_sum(p.w * t64(x)), NestedMap(w=np.zeros(3)))
    assert np.array_equal(g.w.value, x)


def test_constant_loss_gives_zero_gradients():
    _, g = tn.value_and_grad(lambda p: t64(3.0), NestedMap(w=np.ones((2, 2))))
    assert np.array_equal(g.w.value, np.zeros((2, 2)))


def test_mul_gradient_swaps_operands():
    a, b = np.array([1.5, -0.5]), np.array([2.0, 4.0])
    _, g = tn.value_and_grad(lambda p: tn.reduce_sum(p.a * p.b), NestedMap(a=a, b=b))
    assert np.array_equal(g.a.value, b) and np.array_equal(g.b.value, a)
    fd = tn.finite_difference_grad(lambda p: tn.reduce_sum(p.a * p.b), NestedMap(a=a, b=b))
    assert tn.relative_error(fd.a, b).max() <= 1e-6


def test_backward_requires_scalar_loss():
    with tn.Tape() as tape:
        x = tape.watch(t64([1.0, 2.0]))
        y = x * 2.0
    with pytest.raises(tn.NotScalarLossError):
        tn.backward(tape, y, x)


def test_finite_difference_of_square():
    g = tn.finite_difference_grad(lambda p: tn.reduce_sum(tn.square(p.x)), NestedMap(x=np.array([3.0])))
    assert float(g.x.value[0]) == pytest.approx(6.0, abs=1e-6)
    g = tn.finite_difference_grad(lambda p: t64(1.0), NestedMap(x=np.array([3.0])))
    assert float(g.x.value[0]) == 0.0


def test_check_numerics_flag():
    ok = t64([1.0, 2.0])
    assert tn.check_numerics(ok, "loss") is ok
    bad = t64([1.0, np.nan])
    with pytest.raises(tn.NumericsError) as e:
        tn.check_numerics(bad, "loss")
    assert e.value.context == "loss"
    tn.set_flags(enable_check_numerics=False)
    assert tn.check_numerics(bad, "loss") is bad


def test_assert_flags():
    with pytest.raises(tn.AssertionFailedError):
        tn.assert_shape(np.zeros((2, 3)), (2, 4), "x")
    tn.assert_shape(np.zeros((2, 3)), (-1, 3), "x")
    tn.set_flags(enable_asserts=False)
    tn.assert_shape(np.zeros((2, 3)), (2, 4), "x")


def test_slice_and_take_bounds():
    x = t64(np.arange(6.0).reshape(2, 3))
    with pytest.raises(tn.IndexOutOfRangeError):
        tn.slice(x, 1, 2, 2)
    with pytest.raises(tn.IndexOutOfRangeError):
        tn.take(x, 2, 0)


def test_relative_error_metric():
    assert float(tn.relative_error(0.5, 0.25)) == 0.25
    assert float(tn.relative_error(100.0, 101.0)) == pytest.approx(1 / 101)


# Gradient oracle for every differentiable op over 100 random instances.

def _case(rng, name):
    """Returns (loss_fn, point) for op ``name`` at a random small instance."""
    shape = tuple(rng.integers(1, 4, size=2))
    x = rng.normal(size=shape)
    proj = rng.normal(size=shape)

    def reduce(y, p=None):
        p = rng.normal(size=y.shape) if p is None else p
        return tn.reduce_sum(y * t64(p))

    if name == "add":
        return lambda q: reduce(q.a + q.b, proj), NestedMap(a=x, b=rng.normal(size=shape))
    if name == "sub":
        return lambda q: reduce(q.a - q.b, proj), NestedMap(a=x, b=rng.normal(size=shape))
    if name == "mul":
        return lambda q: reduce(q.a * q.b, proj), NestedMap(a=x, b=rng.normal(size=shape))
    if name == "scalar_mul":
        return lambda q: reduce(q.a * q.s, proj), NestedMap(a=x, s=np.asarray(rng.normal()))
    if name == "div":
        b = rng.uniform(0.5, 2.0, size=shape) * rng.choice([-1, 1], size=shape)
        return lambda q: reduce(q.a / q.b, proj), NestedMap(a=x, b=b)
    if name in ("tanh", "sigmoid", "exp", "square", "neg"):
        f = getattr(tn, name)
        return lambda q: reduce(f(q.a), proj), NestedMap(a=x)
    if name == "relu":
        x = np.where(np.abs(x) < 0.1, 0.5, x)  # keep away from the kink
        return lambda q: reduce(tn.relu(q.a), proj), NestedMap(a=x)
    if name == "log":
        return lambda q: reduce(tn.log(q.a), proj), NestedMap(a=np.abs(x) + 0.5)
    if name == "matmul":
        b = rng.normal(size=(shape[1], 3))
        pr = rng.normal(size=(shape[0], 3))
        return lambda q: reduce(tn.matmul(q.a, q.b), pr), NestedMap(a=x, b=b)
    if name == "batch_matmul":
        a, b = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 2, 4))
        pr = rng.normal(size=(2, 3, 4))
        return lambda q: reduce(tn.batch_matmul(q.a, q.b), pr), NestedMap(a=a, b=b)
    if name == "transpose":
        return lambda q: reduce(tn.transpose(q.a), proj.T), NestedMap(a=x)
    if name == "reshape":
        return lambda q: reduce(tn.reshape(q.a, (-1,)), proj.reshape(-1)), NestedMap(a=x)
    if name == "broadcast_to":
        v = rng.normal(size=(shape[1],))
        return lambda q: reduce(tn.broadcast_to(q.a, shape), proj), NestedMap(a=v)
    if name == "concat":
        b = rng.normal(size=(shape[0], 2))
        pr = rng.normal(size=(shape[0], shape[1] + 2))
        return lambda q: reduce(tn.concat([q.a, q.b], axis=1), pr), NestedMap(a=x, b=b)
    if name == "stack":
        pr = rng.normal(size=(2,) + shape)
        return lambda q: reduce(tn.stack([q.a, q.b], 0), pr), NestedMap(a=x, b=rng.normal(size=shape))
    if name == "slice":
        return lambda q: reduce(tn.slice(q.a, 1, 0, 1), proj[:, :1]), NestedMap(a=x)
    if name == "take":
        return lambda q: reduce(tn.take(q.a, 0, 0), proj[0]), NestedMap(a=x)
    if name == "reduce_sum":
        return lambda q: reduce(tn.reduce_sum(q.a, axis=0), proj[0]), NestedMap(a=x)
    if name == "reduce_mean":
        return lambda q: reduce(tn.reduce_mean(q.a, axis=1), proj[:, 0]), NestedMap(a=x)
    if name == "gather":
        ids = rng.integers(0, shape[0], size=5)
        pr = rng.normal(size=(5, shape[1]))
        return lambda q: reduce(tn.gather(q.a, ids), pr), NestedMap(a=x)
    if name == "softmax":
        return lambda q: reduce(tn.softmax(q.a), proj), NestedMap(a=x)
    if name == "log_softmax":
        return lambda q: reduce(tn.log_softmax(q.a), proj), NestedMap(a=x)
    if name == "where":
        m = rng.random(shape) < 0.5
        return lambda q: reduce(tn.where(m, q.a, q.b), proj), NestedMap(a=x, b=rng.normal(size=shape))
    if name == "cross_entropy":
        labels = rng.integers(0, shape[1], size=shape[0])
        w = rng.uniform(0, 1, size=shape[0])
        return lambda q: tn.cross_entropy(q.a, labels, w)[0], NestedMap(a=x)
    raise KeyError(name)


OPS = [
    "add", "sub", "mul", "scalar_mul", "div", "tanh", "sigmoid", "exp", "square", "neg", "relu",
    "log", "matmul", "batch_matmul", "transpose", "reshape", "broadcast_to", "concat", "stack",
    "slice", "take", "reduce_sum", "reduce_mean", "gather", "softmax", "log_softmax", "where",
    "cross_entropy",
]


@pytest.mark.parametrize("op", OPS)
def test_op_gradients_match_finite_differences(op):
    rng = np.random.default_rng(sum(map(ord, op)))
    worst = max(max_grad_error(*_case(rng, op)) for _ in range(100))
    assert worst <= 1e-5


# Properties.

matrices = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=st.floats(-20, 20))


@given(matrices)
def test_log_of_softmax_is_log_softmax(x):
    a = tn.log(tn.softmax(t64(x))).value
    b = tn.log_softmax(t64(x)).value
    assert np.max(np.abs(a - b)) <= 1e-6


@given(matrices, matrices)
def test_concat_then_slice_recovers_operands(a, b):
    if a.shape[0] != b.shape[0]:
        b = np.resize(b, (a.shape[0], b.shape[1]))
    c = tn.concat([t64(a), t64(b)], axis=1)
    assert np.array_equal(tn.slice(c, 1, 0, a.shape[1]).value, a)
    assert np.array_equal(tn.slice(c, 1, a.shape[1], b.shape[1]).value, b)


def test_tape_is_deterministic(rng):
    at = NestedMap(w=rng.normal(size=(3, 4)), b=rng.normal(size=(4,)))
    x = rng.normal(size=(2, 3))

    def f(p):
        y = tn.tanh(tn.matmul(t64(x), p.w) + tn.broadcast_to(p.b, (2, 4)))
        return tn.reduce_sum(tn.log_softmax(y))

    l1, g1 = tn.value_and_grad(f, at)
    l2, g2 = tn.value_and_grad(f, at)
    assert l1.value.tobytes() == l2.value.tobytes()
    assert all(a.value.tobytes() == b.value.tobytes() for a, b in zip(g1.flatten(), g2.flatten()))


def test_tapes_on_threads_are_independent():
    import threading

    results = {}

    def run(k):
        _, g = tn.value_and_grad(lambda p: tn.reduce_sum(p.x * float(k)), NestedMap(x=np.ones(3)))
        results[k] = g.x.value

    threads = [threading.Thread(target=run, args=(k,)) for k in range(1, 5)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k, g in results.items():
        assert np.array_equal(g, np.full(3, float(k)))
