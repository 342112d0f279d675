"""Dense tensors on a reverse-mode gradient tape, plus runtime assertions.

Operations record a backward rule on the innermost active :class:`Tape` when
at least one operand is tracked by that tape. Outside a tape (or for constant
operands) ops are plain numpy computations, which is how evaluation and
inference run.

Broadcasting is limited to rank-0 operands against tensors of any shape;
anything else needs an explicit :func:`broadcast_to`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from seqframe.nested_map import NestedMap

FLOAT_DTYPES = {"float32": np.float32, "float64": np.float64}


class ShapeMismatchError(ValueError):
    pass


class DTypeMismatchError(TypeError):
    pass


class IndexOutOfRangeError(IndexError):
    pass


class NotScalarLossError(ValueError):
    pass


class NumericsError(FloatingPointError):
    def __init__(self, context: str, detail: str = ""):
        super().__init__(f"{context}: {detail}" if detail else context)
        self.context = context


class AssertionFailedError(AssertionError):
    pass


@dataclass
class Flags:
    enable_asserts: bool = True
    enable_check_numerics: bool = True


FLAGS = Flags()


def set_flags(enable_asserts: bool | None = None, enable_check_numerics: bool | None = None):
    if enable_asserts is not None:
        FLAGS.enable_asserts = enable_asserts
    if enable_check_numerics is not None:
        FLAGS.enable_check_numerics = enable_check_numerics


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Append-only record of ops; node ids are topologically ordered."""

    def __init__(self):
        self.nodes: list[tuple[Callable | None, tuple]] = []
        self.enabled = True

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def watch(self, x):
        """Returns a tracked leaf for ``x`` (Tensor, array, or NestedMap)."""
        if isinstance(x, NestedMap):
            return x.transform(self.watch)
        value = x.value if isinstance(x, Tensor) else np.asarray(x)
        node = len(self.nodes)
        self.nodes.append((None, ()))
        return Tensor(value, self, node)

    def _record(self, value, inputs, backward):
        ids = tuple(x.node if isinstance(x, Tensor) and x.tape is self else None for x in inputs)
        if all(i is None for i in ids):
            return Tensor(value)
        node = len(self.nodes)
        self.nodes.append((backward, ids))
        return Tensor(value, self, node)


class Tensor:
    """Immutable dense array, optionally tracked by a tape node."""

    __slots__ = ("value", "tape", "node")
    __array_priority__ = 100

    def __init__(self, value, tape: Tape | None = None, node: int | None = None):
        value = np.asarray(value)
        if value.dtype not in (np.float32, np.float64):
            value = value.astype(np.float64 if value.dtype.kind != "f" else value.dtype)
        self.value = value
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tracked = f", node={self.node}" if self.node is not None else ""
        return f"Tensor({self.value!r}{tracked})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)


def constant(value, dtype="float32") -> Tensor:
    return Tensor(np.asarray(value, dtype=FLOAT_DTYPES.get(dtype, dtype)))


def _make(value, inputs, backward) -> Tensor:
    tape = current_tape()
    if tape is None or not tape.enabled:
        return Tensor(value)
    return tape._record(value, inputs, backward)


def custom_op(value, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Records an op with a caller-supplied backward rule.

    ``backward(g)`` must return one gradient array (or None) per input.
    """
    return _make(np.asarray(value), inputs, backward)


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.dtype != b.dtype:
        raise DTypeMismatchError(f"dtype mismatch: {a.dtype} vs {b.dtype}; use cast()")
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


# Elementwise.


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    av, bv = a.value, b.value
    return _make(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def neg(x: Tensor) -> Tensor:
    return _make(-x.value, (x,), lambda g: (-g,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: (g * (1 - y * y),))


def _sigmoid(v):
    # tanh form is overflow-free for large |v|.
    return 0.5 * (1 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.value)
    return _make(y, (x,), lambda g: (g * y * (1 - y),))


def relu(x: Tensor) -> Tensor:
    v = x.value
    mask = v > 0
    return _make(np.where(mask, v, 0).astype(v.dtype), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.value)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    v = x.value
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(v)
    out = _make(y, (x,), lambda g: (g / v,))
    return check_numerics(out, "log of non-positive value")


def square(x: Tensor) -> Tensor:
    return mul(x, x)


def cast(x: Tensor, dtype) -> Tensor:
    dt = np.dtype(FLOAT_DTYPES.get(dtype, dtype))
    src = x.dtype
    return _make(x.value.astype(dt), (x,), lambda g: (g.astype(src),))


def where(mask, a, b) -> Tensor:
    """``a`` where ``mask`` else ``b``; ``mask`` is a constant boolean array
    broadcastable to the common shape of ``a`` and ``b``."""
    a, b = _binary_operands(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"where operands differ: {a.shape} vs {b.shape}")
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    zero = np.zeros((), a.dtype)
    return _make(
        np.where(m, a.value, b.value),
        (a, b),
        lambda g: (np.where(m, g, zero), np.where(m, zero, g)),
    )


# Shape and linear algebra.


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _binary_operands_nobcast(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul shapes {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def batch_matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _binary_operands_nobcast(a, b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeMismatchError(f"batch_matmul shapes {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _make(
        np.matmul(av, bv),
        (a, b),
        lambda g: (np.matmul(g, bv.transpose(0, 2, 1)), np.matmul(av.transpose(0, 2, 1), g)),
    )


def _binary_operands_nobcast(a, b):
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("operands must be Tensors")
    if a.dtype != b.dtype:
        raise DTypeMismatchError(f"dtype mismatch: {a.dtype} vs {b.dtype}; use cast()")
    return a, b


def transpose(x: Tensor, perm: Sequence[int] | None = None) -> Tensor:
    perm = tuple(perm) if perm is not None else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(perm))
    return _make(np.transpose(x.value, perm), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        y = x.value.reshape(shape)
    except ValueError as e:
        raise ShapeMismatchError(str(e)) from None
    return _make(y, (x,), lambda g: (g.reshape(src),))


def expand_dims(x: Tensor, axis: int) -> Tensor:
    src = x.shape
    return _make(np.expand_dims(x.value, axis), (x,), lambda g: (g.reshape(src),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    src = x.shape
    shape = tuple(shape)
    try:
        y = np.broadcast_to(x.value, shape)
    except ValueError as e:
        raise ShapeMismatchError(str(e)) from None
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, d in enumerate(src) if d == 1 and shape[i + lead] != 1
    )

    def backward(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src) if axes else g,)

    return _make(np.ascontiguousarray(y), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    dt = xs[0].dtype
    for x in xs:
        if x.dtype != dt:
            raise DTypeMismatchError("concat operands must share a dtype")
    try:
        y = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError(str(e)) from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(y, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    try:
        y = np.stack([x.value for x in xs], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError(str(e)) from None
    n = len(xs)
    return _make(y, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def slice(x: Tensor, axis: int, start: int, length: int) -> Tensor:  # noqa: A001
    axis = axis % x.ndim
    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise IndexOutOfRangeError(f"slice [{start}, {start + length}) of axis size {x.shape[axis]}")
    idx = (np.s_[:],) * axis + (np.s_[start : start + length],)
    src, dt = x.shape, x.dtype

    def backward(g):
        out = np.zeros(src, dt)
        out[idx] = g
        return (out,)

    return _make(x.value[idx], (x,), backward)


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Selects one position along ``axis``, dropping that axis."""
    axis = axis % x.ndim
    if not 0 <= index < x.shape[axis]:
        raise IndexOutOfRangeError(f"index {index} out of range for axis size {x.shape[axis]}")
    idx = (np.s_[:],) * axis + (index,)
    src, dt = x.shape, x.dtype

    def backward(g):
        out = np.zeros(src, dt)
        out[idx] = g
        return (out,)

    return _make(x.value[idx], (x,), backward)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    src = x.shape
    y = np.sum(x.value, axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _make(np.asarray(y, dtype=x.dtype), (x,), backward)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.value.size if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis), np.asarray(1.0 / n, dtype=x.dtype))


def gather(table: Tensor, ids) -> Tensor:
    """Rows of a 2-D ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeMismatchError(f"gather expects a 2-D table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexOutOfRangeError(f"ids outside [0, {table.shape[0]})")
    src, dt = table.shape, table.dtype

    def backward(g):
        out = np.zeros(src, dt)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, src[1]))
        return (out,)

    return _make(table.value[ids], (table,), backward)


def _softmax_np(v, axis):
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax_np(v, axis):
    z = v - v.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _softmax_np(x.value, axis)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _log_softmax_np(x.value, axis)

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), backward)


def cross_entropy(logits: Tensor, label_ids, weights) -> tuple[Tensor, Tensor]:
    """Weighted token cross entropy.

    Returns ``(sum_i w_i * nll_i, sum_i w_i)``; the second value is a constant.
    ``logits`` is ``[N, V]``, ``label_ids`` and ``weights`` are length ``N``.
    """
    v = logits.value
    labels = np.asarray(label_ids).reshape(-1)
    w = np.asarray(weights, dtype=v.dtype).reshape(-1)
    if v.ndim != 2 or labels.shape[0] != v.shape[0] or w.shape[0] != v.shape[0]:
        raise ShapeMismatchError(f"cross_entropy shapes {v.shape}, {labels.shape}, {w.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= v.shape[1]):
        raise IndexOutOfRangeError(f"labels outside [0, {v.shape[1]})")
    logp = _log_softmax_np(v, 1)
    rows = np.arange(v.shape[0])
    nll = -logp[rows, labels]
    total = np.asarray((w * nll).sum(), dtype=v.dtype)

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1
        return (d * (w * g)[:, None],)

    return _make(total, (logits,), backward), Tensor(np.asarray(w.sum(), dtype=v.dtype))


# Gradients.


def backward(tape: Tape, loss: Tensor, wrt: NestedMap | Tensor):
    """Gradients of the rank-0 ``loss`` with respect to every leaf of ``wrt``.

    Leaves that did not take part in computing ``loss`` receive zeros.
    """
    if loss.ndim != 0:
        raise NotScalarLossError(f"loss must be rank-0, got shape {loss.shape}")
    single = isinstance(wrt, Tensor)
    leaves = [wrt] if single else wrt.flatten()
    grads: list = []
    if loss.tape is tape and loss.node is not None:
        grads = [None] * (loss.node + 1)
        grads[loss.node] = np.ones((), loss.dtype)
        nodes = tape.nodes
        for i in range(loss.node, -1, -1):
            g = grads[i]
            if g is None:
                continue
            fn, ids = nodes[i]
            if fn is None:
                continue
            in_grads = fn(g)
            for j, ig in zip(ids, in_grads):
                if j is None or ig is None:
                    continue
                prev = grads[j]
                grads[j] = ig if prev is None else prev + ig
    out = []
    for leaf in leaves:
        g = None
        if leaf.tape is tape and leaf.node is not None and leaf.node < len(grads):
            g = grads[leaf.node]
        out.append(Tensor(np.zeros(leaf.shape, leaf.dtype) if g is None else np.asarray(g, leaf.dtype)))
    return out[0] if single else wrt.pack(out)


def value_and_grad(fn: Callable, at: NestedMap):
    """Evaluates ``fn(at)`` on a fresh tape and returns ``(loss, grads)``."""
    with Tape() as tape:
        params = tape.watch(at)
        loss = fn(params)
    return loss, backward(tape, loss, params)


def finite_difference_grad(fn: Callable, at: NestedMap, step: float = 1e-5) -> NestedMap:
    """Central-difference gradient of a scalar function of a NestedMap."""
    base = at.transform(_float_copy)
    paths = [p for p, _ in base.flatten_items()]

    def evaluate():
        r = fn(base.transform(Tensor))
        return float(r.value if isinstance(r, Tensor) else r)

    grads = NestedMap()
    for path in paths:
        arr = base.get_path(path)
        g = np.zeros(arr.shape, np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = evaluate()
            flat[k] = orig - step
            fm = evaluate()
            flat[k] = orig
            gflat[k] = (fp - fm) / (2 * step)
        grads.set_path(path, Tensor(g.astype(arr.dtype)))
    return at.structure().pack([grads.get_path(p) for p in paths])


def _float_copy(x) -> np.ndarray:
    v = np.array(x.value if isinstance(x, Tensor) else x)
    return v if v.dtype.kind == "f" else v.astype(np.float64)


def relative_error(a, b) -> np.ndarray:
    """``|a - b| / max(1, |a|, |b|)`` elementwise."""
    a = np.asarray(a.value if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.value if isinstance(b, Tensor) else b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


# Runtime checks.


def check_numerics(t: Tensor, context: str = "") -> Tensor:
    """Returns ``t`` unchanged; raises :class:`NumericsError` on NaN/Inf."""
    if FLAGS.enable_check_numerics:
        v = t.value if isinstance(t, Tensor) else np.asarray(t)
        if not np.all(np.isfinite(v)):
            bad = int(np.size(v) - np.count_nonzero(np.isfinite(v)))
            raise NumericsError(context, f"{bad} non-finite value(s)")
    return t


def assert_shape(t, shape, context: str = "") -> None:
    """Checks a shape; ``-1``/None entries match any extent."""
    if not FLAGS.enable_asserts:
        return
    actual = t.shape if hasattr(t, "shape") else np.shape(t)
    ok = len(actual) == len(shape) and all(s in (-1, None) or s == a for s, a in zip(shape, actual))
    if not ok:
        raise AssertionFailedError(f"{context}: expected shape {tuple(shape)}, got {tuple(actual)}")


def assert_in_set(values, allowed, context: str = "") -> None:
    if not FLAGS.enable_asserts:
        return
    v = np.asarray(values.value if isinstance(values, Tensor) else values)
    if not np.isin(v, list(allowed)).all():
        raise AssertionFailedError(f"{context}: values outside {sorted(allowed)}")
