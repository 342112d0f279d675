"""Base class for everything that owns variables: layers, tasks, and models.

A layer is built from its params, creates its variables and children inside
``__init__``, and exposes a pure ``fprop(theta, ...)``. ``vars`` holds the
mutable storage cells; ``theta`` holds the per-use values handed to fprop.
"""

from __future__ import annotations

import contextlib
import hashlib
import threading

import numpy as np

from seqframe import hyperparams
from seqframe.hyperparams import Params
from seqframe.nested_map import NestedMap
from seqframe.tensor import FLOAT_DTYPES, Tensor


class LayerError(Exception):
    pass


class DuplicateVariableError(LayerError):
    pass


class DuplicateChildError(LayerError):
    pass


class PostConstructionCreateError(LayerError):
    pass


INIT_METHODS = ("constant", "uniform", "gaussian", "xavier")


def weight_init(method: str = "xavier", scale: float = 1.0) -> Params:
    if method not in INIT_METHODS:
        raise ValueError(f"unknown init method {method!r}")
    if scale < 0:
        raise ValueError("init scale must be >= 0")
    p = Params()
    p.define("method", method, "One of constant, uniform, gaussian, xavier.")
    p.define("scale", float(scale), "Constant value, uniform half-width, gaussian std, or xavier gain.")
    return p


def stable_seed(*parts) -> int:
    """Process-independent 64-bit seed from ints and strings."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def initial_value(init: Params, shape, dtype, seed: int, name: str) -> np.ndarray:
    shape = tuple(int(d) for d in shape)
    rng = np.random.default_rng(stable_seed(seed, name))
    method, scale = init.method, init.scale
    if method == "constant":
        v = np.full(shape, scale, np.float64)
    elif method == "uniform":
        v = rng.uniform(-scale, scale, shape)
    elif method == "gaussian":
        v = rng.normal(0.0, scale, shape)
    elif method == "xavier":
        if len(shape) >= 2:
            fan_in, fan_out = int(np.prod(shape[:-1])), shape[-1]
        else:
            fan_in = fan_out = shape[0] if shape else 1
        limit = scale * np.sqrt(6.0 / max(1, fan_in + fan_out))
        v = rng.uniform(-limit, limit, shape)
    else:
        raise ValueError(f"unknown init method {method!r}")
    return v.astype(FLOAT_DTYPES[dtype])


class Variable:
    """A named, mutable storage cell. Multi-task sharing shares these objects."""

    __slots__ = ("name", "value", "trainable")

    def __init__(self, name: str, value: np.ndarray, trainable: bool = True):
        self.name = name
        self.value = value
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    @property
    def nbytes(self) -> int:
        return int(self.value.nbytes)

    def assign(self, value) -> None:
        value = np.asarray(value, dtype=self.value.dtype)
        if value.shape != self.value.shape:
            raise ValueError(f"{self.name}: shape {value.shape} != {self.value.shape}")
        self.value = value.copy()

    def __repr__(self):
        return f"Variable({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


_scope = threading.local()


@contextlib.contextmanager
def _name_scope(path: str):
    prev = getattr(_scope, "path", "")
    _scope.path = path
    try:
        yield
    finally:
        _scope.path = prev


class _LayerMeta(type):
    def __init__(cls, name, bases, ns):
        super().__init__(name, bases, ns)
        hyperparams.register_class(cls)

    def __call__(cls, *args, **kwargs):
        obj = super().__call__(*args, **kwargs)
        obj._constructed = True
        return obj


class BaseLayer(metaclass=_LayerMeta):
    """Owns params, child layers, and variables."""

    @classmethod
    def Params(cls) -> Params:  # noqa: N802 - instances use .params
        p = Params()
        p.define("cls", cls, "Class to instantiate from these params.")
        p.define("name", "", "Layer name; also the variable-name prefix.")
        p.define("dtype", "float32", "Variable and activation dtype: float32 or float64.")
        p.define("params_init", weight_init("xavier", 1.0), "Default initializer for variables.")
        p.define("is_eval", False, "Evaluation / inference mode.")
        p.define("random_seed", 0, "Seed for variable initialization and noise.")
        p.define("vn_scale", 0.0, "Std-dev of variational weight noise; 0 disables.")
        return p

    def __init__(self, params: Params):
        if params.cls is None:
            raise hyperparams.MissingClsError("params have no cls")
        if not params.name:
            raise hyperparams.MissingNameError(f"{type(self).__name__} needs a non-empty name")
        if params.dtype not in FLOAT_DTYPES:
            raise ValueError(f"unsupported dtype {params.dtype!r}")
        self._constructed = False
        self._params = params.copy().seal()
        parent = getattr(_scope, "path", "")
        self._path = f"{parent}/{params.name}" if parent else params.name
        self._children: dict[str, BaseLayer] = {}
        self._vars: dict[str, Variable] = {}
        self._var_order: list[str] = []

    @property
    def params(self) -> Params:
        return self._params

    @property
    def path(self) -> str:
        return self._path

    @property
    def children(self) -> dict:
        return dict(self._children)

    def __getattr__(self, name):
        children = self.__dict__.get("_children")
        if children is not None and name in children:
            return children[name]
        raise AttributeError(f"{type(self).__name__} has no attribute or child {name!r}")

    # Construction-time API.

    def _check_constructing(self, what: str):
        if self.__dict__.get("_constructed", False):
            raise PostConstructionCreateError(f"{what} after construction of {self._path}")

    def create_variable(self, name: str, shape, init: Params | None = None, trainable: bool = True) -> None:
        self._check_constructing(f"create_variable({name!r})")
        if name in self._vars or name in self._children:
            raise DuplicateVariableError(f"{self._path}/{name} already exists")
        p = self.params
        full = f"{self._path}/{name}"
        value = initial_value(init if init is not None else p.params_init, shape, p.dtype, p.random_seed, full)
        self._vars[name] = Variable(full, value, trainable)
        self._var_order.append(name)

    def create_child(self, name: str, child_params: Params) -> None:
        self._check_constructing(f"create_child({name!r})")
        if name in self._children or name in self._vars:
            raise DuplicateChildError(f"{self._path}/{name} already exists")
        cp = child_params.copy()
        copy_base_params(self.params, cp)
        cp.name = name
        with _name_scope(self._path):
            self._children[name] = hyperparams.instantiate(cp)

    # Variables and theta.

    @property
    def vars(self) -> NestedMap:
        out = NestedMap({k: self._vars[k] for k in self._var_order})
        for k, child in self._children.items():
            out[k] = child.vars
        return out

    def variables(self) -> list[Variable]:
        """Every cell under this layer, in flatten order."""
        return self.vars.flatten()

    def get_theta(self, global_step: int = 0) -> NestedMap:
        """Variable values after per-use transforms.

        In training with ``vn_scale > 0`` every value gets fresh gaussian noise
        seeded by ``(random_seed, global_step, variable name)``.
        """
        p = self.params
        out = NestedMap()
        for k in self._var_order:
            v = self._vars[k]
            value = v.value
            if not p.is_eval and p.vn_scale > 0 and v.trainable:
                rng = np.random.default_rng(stable_seed(p.random_seed, global_step, v.name, "vn"))
                value = value + rng.normal(0.0, p.vn_scale, value.shape).astype(value.dtype)
            out[k] = Tensor(value)
        for k, child in self._children.items():
            out[k] = child.get_theta(global_step)
        return out

    @property
    def theta(self) -> NestedMap:
        return self.get_theta(0)

    def _replace_cell(self, relative_name: str, cell: Variable) -> None:
        """Points the variable at ``relative_name`` to an existing cell."""
        parts = relative_name.split("/")
        layer = self
        for part in parts[:-1]:
            layer = layer._children[part]
        if parts[-1] not in layer._vars:
            raise KeyError(relative_name)
        layer._vars[parts[-1]] = cell

    def fprop(self, theta: NestedMap, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__}.fprop")

    @property
    def dtype(self):
        return FLOAT_DTYPES[self.params.dtype]


_BASE_DEFAULTS = {"dtype": "float32", "is_eval": False, "random_seed": 0, "vn_scale": 0.0}


def copy_base_params(src: Params, dst: Params) -> Params:
    """Children inherit dtype, mode, seed, and noise settings from the parent.

    Only parent values that differ from the framework default are pushed down,
    so a child configured explicitly keeps its setting under a default parent.
    """
    for key, default in _BASE_DEFAULTS.items():
        if key in src and key in dst and src.get(key) != default:
            dst.set(key, src.get(key))
    return dst
