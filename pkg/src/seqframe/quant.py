"""Fake quantization for quantization-aware training, and inference export.

Quantization is asymmetric and uniform over a range that always contains
zero. Values are clamped to ``[min, max]``, snapped to the nearest of
``2**bits`` evenly spaced levels, and mapped back to floats. The backward pass
is the straight-through estimator: gradients pass unchanged inside the range
and are zero outside it.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from seqframe import tensor as tn
from seqframe.hyperparams import Params, instantiate
from seqframe.layers.base_layer import BaseLayer, _name_scope, copy_base_params, weight_init
from seqframe.nested_map import NestedMap
from seqframe.tensor import Tensor

log = logging.getLogger(__name__)


class QuantError(Exception):
    pass


class UninitializedDomainError(QuantError):
    pass


class FrozenDomainError(QuantError):
    pass


@dataclass
class QuantDomain:
    bits: int = 8
    min: float = 0.0
    max: float = 0.0
    decay: float = 0.99
    frozen: bool = False
    initialized: bool = False

    @property
    def levels(self) -> int:
        return 2**self.bits - 1

    @property
    def scale(self) -> float:
        return (self.max - self.min) / self.levels

    def freeze(self) -> "QuantDomain":
        self.frozen = True
        return self


def track_range(d: QuantDomain, t) -> None:
    """EMA update of the range from the extrema of ``t``, then re-span zero.

    The first update takes the batch extrema directly.
    """
    if d.frozen:
        raise FrozenDomainError("cannot track a frozen quantization domain")
    v = np.asarray(getattr(t, "value", t), dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if d.initialized:
        lo = d.decay * d.min + (1 - d.decay) * lo
        hi = d.decay * d.max + (1 - d.decay) * hi
    d.min, d.max = min(lo, 0.0), max(hi, 0.0)
    d.initialized = True


def _quantize_np(v: np.ndarray, lo: float, hi: float, bits: int) -> np.ndarray:
    x = np.clip(np.asarray(v, dtype=np.float64), lo, hi)
    scale = (hi - lo) / (2**bits - 1)
    return np.clip(lo + np.round((x - lo) / scale) * scale, lo, hi)


def fake_quant(t: Tensor, d: QuantDomain) -> Tensor:
    if not d.initialized or not d.max > d.min:
        raise UninitializedDomainError("quantization domain has an empty range")
    x = t.value
    lo, hi = d.min, d.max
    y = _quantize_np(x, lo, hi, d.bits).astype(x.dtype)
    inside = (x >= lo) & (x <= hi)
    return tn.custom_op(y, [t], lambda g: [np.where(inside, g, 0).astype(g.dtype)])


def weight_domain(value: np.ndarray, bits: int) -> QuantDomain:
    """Frozen domain spanning a weight tensor's own extrema (and zero)."""
    d = QuantDomain(bits=bits)
    track_range(d, value)
    if not d.max > d.min:
        d.max = d.min + 1.0
    return d.freeze()


class QuantizedLayer(BaseLayer):
    """Wraps a layer; fake-quantizes its float weights and its output.

    The wrapped layer keeps the variable names it would have unwrapped. The
    output range is an EMA tracked during training and kept in the
    non-trainable variable ``out_range`` as ``[min, max, initialized]``; in
    eval mode it is frozen. ``bits=0`` disables quantization entirely.
    """

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("body", None, "Params of the wrapped layer.")
        p.define("bits", 8, "Quantization bits; 0 disables.")
        p.define("decay", 0.99, "EMA decay of the tracked output range.")
        p.define("quantize_weights", True, "Fake-quantize float weights.")
        p.define("quantize_outputs", True, "Fake-quantize the layer output.")
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        if p.body is None:
            raise QuantError("QuantizedLayer needs body params")
        if p.bits and not 2 <= p.bits <= 24:
            raise QuantError("bits must be 0 (off) or in [2, 24]")
        body = p.body.copy()
        copy_base_params(p, body)
        body.name = p.name
        parent = self._path.rsplit("/", 1)[0] if "/" in self._path else ""
        with _name_scope(parent):
            self._children["body"] = instantiate(body)
        if p.bits:
            self.create_variable("out_range", (3,), init=weight_init("constant", 0.0), trainable=False)
        self._warned = False

    @property
    def enabled(self) -> bool:
        return bool(self.params.bits)

    def output_domain(self) -> QuantDomain:
        lo, hi, init = (float(x) for x in self._vars["out_range"].value)
        return QuantDomain(self.params.bits, lo, hi, self.params.decay, self.params.is_eval, bool(init))

    def _quant_theta(self, theta: NestedMap) -> NestedMap:
        bits = self.params.bits

        def q(t):
            if not np.issubdtype(t.value.dtype, np.floating) or t.value.size == 0:
                return t
            return fake_quant(t, weight_domain(t.value, bits))

        return theta.transform(q)

    def fprop(self, theta, *args, **kwargs):
        p = self.params
        if not self.enabled:
            return self.body.fprop(theta.body, *args, **kwargs)
        body_theta = self._quant_theta(theta.body) if p.quantize_weights else theta.body
        y = self.body.fprop(body_theta, *args, **kwargs)
        if not p.quantize_outputs:
            return y
        d = self.output_domain()
        if not p.is_eval:
            track_range(d, y)
            self._vars["out_range"].assign(np.asarray([d.min, d.max, 1.0], dtype=self.dtype))
        if not d.initialized or not d.max > d.min:
            if not self._warned:
                log.warning("%s: output range never tracked; output left unquantized", self.path)
                self._warned = True
            return y
        return fake_quant(y, d)


def quantized(body: Params, bits: int = 8, **kwargs) -> Params:
    """Params wrapping ``body`` in a :class:`QuantizedLayer`."""
    return QuantizedLayer.Params().set(body=body, bits=bits, **kwargs)


class InferenceFn:
    """Forward-only decoder over restored, frozen variables; batch size 1."""

    def __init__(self, task, theta, beam_size: int):
        self._task = task
        self._theta = theta
        self._beam = beam_size

    def __call__(self, src) -> list[int]:
        if isinstance(src, NestedMap):
            ids = np.asarray(src.src_ids)
            pad = np.asarray(src.src_paddings)
            if ids.ndim == 2:
                if ids.shape[0] != 1:
                    raise ValueError("exported inference takes a batch of exactly 1")
                ids, pad = ids[0], pad[0]
            src = ids[pad == 0]
        return self._task.decode_ids(self._theta, np.asarray(src, np.int32), self._beam)


def export_inference(
    model_params: Params,
    checkpoint_path: str,
    manifest_path: str | None = None,
    task_name: str | None = None,
    beam_size: int | None = None,
) -> InferenceFn:
    """Restores ``checkpoint_path`` into an eval-mode model and returns its decoder.

    Raises CheckpointMissingVariableError when a variable is absent.
    """
    from seqframe.runners.checkpoint import restore_checkpoint
    from seqframe.runners.hosts import build_model

    model = build_model(model_params, is_eval=True)
    model.load(restore_checkpoint(checkpoint_path).values, strict=True)
    name = task_name or next(iter(model.tasks))
    task = model.tasks[name]
    fn = InferenceFn(task, task.get_theta(0), beam_size or task.params.eval_beam_size)
    if manifest_path:
        write_manifest(manifest_path, [("src_ids", "int32", (1, -1))], [("hyp_ids", "int32", (1, -1))])
    return fn


def write_manifest(path: str, inputs, outputs) -> None:
    """Writes ``input <name> <shape>`` / ``output <name> <shape>`` lines; -1 is a free dim."""
    def fmt(shape):
        return "[" + ",".join(str(int(d)) for d in shape) + "]"

    lines = [f"input {n} {fmt(s)}\n" for n, _, s in inputs] + [f"output {n} {fmt(s)}\n" for n, _, s in outputs]
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(lines)


def read_manifest(path: str) -> dict:
    out = {"input": {}, "output": {}}
    with open(path, encoding="utf-8") as f:
        for line in f:
            kind, name, shape = line.split()
            out[kind][name] = tuple(int(x) for x in shape.strip("[]").split(","))
    return out
