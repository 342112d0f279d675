"""Tasks and the models that wrap them.

A task is a layer that also knows its input, its loss, and how to train. A
model wraps one task (:class:`SingleTaskModel`) or several tasks that share
variables and are sampled per step (:class:`MultiTaskModel`).
"""

from __future__ import annotations

import logging
import re

import numpy as np

from seqframe import tensor as tn
from seqframe.hyperparams import Params
from seqframe.layers.base_layer import BaseLayer, Variable, stable_seed
from seqframe.nested_map import NestedMap
from seqframe.optimizer import Optimizer, clip_by_global_norm, train_params, validate_train_params

log = logging.getLogger(__name__)


class ModelError(Exception):
    pass


class SharedShapeMismatchError(ModelError):
    pass


class CheckpointMissingVariableError(ModelError, KeyError):
    pass


def metric_mean(metrics: NestedMap, key: str = "loss") -> float:
    total, weight = metrics[key]
    return float(total) / float(weight) if float(weight) > 0 else 0.0


def _to_floats(metrics: NestedMap) -> NestedMap:
    out = NestedMap()
    for k, (v, w) in metrics.items():
        out[k] = (float(np.asarray(getattr(v, "value", v))), float(np.asarray(getattr(w, "value", w))))
    return out


def normalize_gradients(grad_sums: dict, weight: float) -> dict:
    """Turns gradients of a summed loss into gradients of the per-weight mean."""
    scale = 1.0 / weight if weight > 0 else 0.0
    return {k: (g * scale).astype(g.dtype) for k, g in grad_sums.items()}


def finalize_gradients(grads: dict, train_p: Params) -> tuple[dict, float]:
    """Checks numerics, then clips by global norm."""
    for k, g in grads.items():
        tn.check_numerics(tn.Tensor(g), f"gradient of {k}")
    return clip_by_global_norm(grads, train_p.clip_gradient_norm)


def apply_gradients(cells: dict, grads: dict, optimizer: Optimizer, global_step: int) -> None:
    """Exactly one optimizer update per listed variable, in name order."""
    for name in sorted(grads):
        cell = cells[name]
        cell.value = optimizer.apply(name, cell.value, grads[name], global_step)


class BaseTask(BaseLayer):
    """A complete optimization problem: input, network, loss, optimizer.

    Subclasses implement :meth:`compute_metrics`, returning a NestedMap whose
    ``loss`` entry is ``(weighted nll sum, total weight)``.
    """

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("input", None, "Input generator params.")
        p.define("train", train_params(), "Training hyperparameters.")
        p.define("eval_beam_size", 1, "Beam width for decoding; 1 is greedy.")
        return p

    def __init__(self, params):
        super().__init__(params)
        validate_train_params(self.params.train)
        self._optimizer: Optimizer | None = None

    def compute_metrics(self, theta, batch: NestedMap) -> NestedMap:
        raise NotImplementedError

    def fprop(self, theta, batch: NestedMap) -> NestedMap:
        metrics = self.compute_metrics(theta, batch)
        tn.check_numerics(metrics.loss[0], "loss")
        return metrics

    def relative_names(self) -> dict[str, Variable]:
        """Task-relative variable path (``enc/rnn/cell/wm``) -> cell."""
        return {path.replace(".", "/"): v for path, v in self.vars.flatten_items()}

    def cells(self) -> dict[str, Variable]:
        """Canonical variable name -> cell for every variable of this task."""
        return {v.name: v for v in self.variables()}

    def compute_gradients(self, batch: NestedMap, global_step: int = 0):
        """Returns ``(float metrics, gradient sums by variable name, weight)``.

        Gradients are of the summed loss; divide by the weight for the mean.
        """
        theta = self.get_theta(global_step)
        with tn.Tape() as tape:
            watched = tape.watch(theta)
            metrics = self.fprop(watched, batch)
        total, weight = metrics.loss
        grads = tn.backward(tape, total, watched)
        out = {}
        for v, g in zip(self.vars.flatten(), grads.flatten()):
            if v.trainable:
                out[v.name] = g.value
        return _to_floats(metrics), out, float(weight.value)

    def eval_metrics(self, batch: NestedMap) -> NestedMap:
        return _to_floats(self.fprop(self.get_theta(0), batch))

    def train_step(self, batch: NestedMap, global_step: int) -> NestedMap:
        """One update of this task's variables with its own optimizer."""
        if self._optimizer is None:
            self._optimizer = Optimizer(self.params.train)
        metrics, grad_sums, weight = self.compute_gradients(batch, global_step)
        grads, _ = finalize_gradients(normalize_gradients(grad_sums, weight), self.params.train)
        apply_gradients(self.cells(), grads, self._optimizer, global_step)
        return metrics

    # Decoding: subclasses return one prediction per example.

    def decode(self, theta, batch: NestedMap) -> list:
        raise NotImplementedError(f"{type(self).__name__} does not decode")

    def references(self, batch: NestedMap) -> list:
        raise NotImplementedError(f"{type(self).__name__} does not decode")


class BaseModel(BaseLayer):
    """Common surface of single- and multi-task models used by the runners."""

    def __init__(self, params):
        super().__init__(params)
        self._optimizer: Optimizer | None = None

    def _scoped_child(self, name: str, child_params: Params) -> None:
        # Tasks are named as if top-level so variable names do not depend on
        # the wrapper.
        path = self._path
        self._path = ""
        try:
            self.create_child(name, child_params)
        finally:
            self._path = path

    @property
    def tasks(self) -> dict[str, BaseTask]:
        raise NotImplementedError

    @property
    def train_params(self) -> Params:
        raise NotImplementedError

    def input_params(self, task_name: str) -> Params:
        raise NotImplementedError

    def sample_task(self, global_step: int) -> str:
        return next(iter(self.tasks))

    def cells(self) -> dict[str, Variable]:
        """Canonical name -> unique cell, sorted by name."""
        seen: dict[int, Variable] = {}
        for task in self.tasks.values():
            for v in task.variables():
                seen.setdefault(id(v), v)
        return {v.name: v for v in sorted(seen.values(), key=lambda v: v.name)}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.cells().items()}

    def load(self, values: dict, strict: bool = True) -> None:
        for name, cell in self.cells().items():
            if name not in values:
                if strict:
                    raise CheckpointMissingVariableError(f"checkpoint lacks variable {name!r}")
                continue
            cell.assign(values[name])

    @property
    def optimizer(self) -> Optimizer:
        if self._optimizer is None:
            self._optimizer = Optimizer(self.train_params)
        return self._optimizer

    def train_step(self, task_name: str, batch: NestedMap, global_step: int) -> NestedMap:
        """Updates the sampled task's variables (shared ones included)."""
        task = self.tasks[task_name]
        metrics, grad_sums, weight = task.compute_gradients(batch, global_step)
        grads, _ = finalize_gradients(normalize_gradients(grad_sums, weight), self.train_params)
        apply_gradients(task.cells(), grads, self.optimizer, global_step)
        return metrics


class SingleTaskModel(BaseModel):
    """Transparent wrapper around one task."""

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("task", None, "Params of the wrapped task.")
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        if p.task is None:
            raise ModelError("SingleTaskModel needs task params")
        self._scoped_child(p.task.name or "task", p.task)
        self._task_name = p.task.name or "task"

    @property
    def task(self) -> BaseTask:
        return self._children[self._task_name]

    @property
    def tasks(self):
        return {self._task_name: self.task}

    @property
    def train_params(self):
        return self.task.params.train

    def input_params(self, task_name: str) -> Params:
        return self.task.params.input


def sharing_params(kind: str = "none", encoder_name: str = "enc", patterns=()) -> Params:
    p = Params()
    p.define("kind", kind, "none, shared_encoder, or regex_shared.")
    p.define("encoder_name", encoder_name, "Child shared under shared_encoder.")
    p.define("patterns", list(patterns), "Regexes over task-relative variable paths.")
    return p


def sample_task(probs: dict, rng: np.random.Generator) -> str:
    """Categorical draw proportional to (unnormalized) ``probs``."""
    names = list(probs)
    weights = np.asarray([probs[n] for n in names], dtype=np.float64)
    if (weights < 0).any() or weights.sum() <= 0:
        raise ValueError("task probabilities must be >= 0 with a positive sum")
    cdf = np.cumsum(weights / weights.sum())
    u = rng.random()
    i = int(np.searchsorted(cdf, u, side="right"))
    return names[min(i, len(names) - 1)]


class MultiTaskModel(BaseModel):
    """Several tasks, one sampled per training step, with variable sharing."""

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("task_params", Params(), "Task name -> task params.")
        p.define("task_probs", Params(), "Task name -> relative sampling weight.")
        p.define("sharing", sharing_params(), "Variable sharing policy.")
        p.define("train", train_params(), "Training hyperparameters for the joint model.")
        p.define("input", None, "Task name -> input params.")
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        validate_train_params(p.train)
        names = p.task_params.keys()
        if set(names) != set(p.task_probs.keys()):
            raise ModelError("task_params and task_probs must have the same keys")
        if not names:
            raise ModelError("multi-task model needs at least one task")
        probs = [p.task_probs.get(n) for n in names]
        if any(x < 0 for x in probs) or sum(probs) <= 0:
            raise ModelError("task_probs must be >= 0 with a positive sum")
        for name in names:
            self._scoped_child(name, p.task_params.get(name))
        self._task_names = list(names)
        self._share()

    def _share(self) -> None:
        s = self.params.sharing
        if s.kind == "none":
            return
        if s.kind == "shared_encoder":
            prefix = s.encoder_name + "/"
            matches = lambda rel: rel.startswith(prefix)  # noqa: E731
        elif s.kind == "regex_shared":
            regexes = [re.compile(r) for r in s.patterns]
            matches = lambda rel: any(r.fullmatch(rel) for r in regexes)  # noqa: E731
        else:
            raise ModelError(f"unknown sharing kind {s.kind!r}")
        owners: dict[str, Variable] = {}
        for name in self._task_names:
            task = self._children[name]
            for rel, cell in task.relative_names().items():
                if not matches(rel):
                    continue
                if rel not in owners:
                    owners[rel] = cell
                    continue
                shared = owners[rel]
                if shared.shape != cell.shape or shared.value.dtype != cell.value.dtype:
                    raise SharedShapeMismatchError(
                        f"{rel}: {name} has {cell.shape}, shared cell {shared.name} has {shared.shape}"
                    )
                task._replace_cell(rel, shared)
        if s.kind == "shared_encoder" and not owners:
            raise ModelError(f"no variables under shared encoder {s.encoder_name!r}")

    @property
    def tasks(self):
        return {n: self._children[n] for n in self._task_names}

    @property
    def train_params(self):
        return self.params.train

    def input_params(self, task_name: str) -> Params:
        inputs = self.params.input
        if inputs is not None and task_name in inputs:
            return inputs.get(task_name)
        return self.tasks[task_name].params.input

    def task_probs(self) -> dict[str, float]:
        return {n: self.params.task_probs.get(n) for n in self._task_names}

    def sample_task(self, global_step: int) -> str:
        rng = np.random.default_rng(stable_seed(self.params.random_seed, global_step, "task"))
        return sample_task(self.task_probs(), rng)


def build_multitask(p: Params) -> MultiTaskModel:
    from seqframe.hyperparams import instantiate

    return instantiate(p)


def apply_init_rules(task: BaseTask, rules) -> list[str]:
    """Overwrites matching variables from checkpoints; returns names touched.

    Rules are ``(regex, checkpoint_path)`` applied in order, so a variable
    matched by several rules ends up with the value from the last one. Regexes
    must fully match either the full variable name (``copy/dec_emb/emb``) or
    the task-relative path (``dec_emb/emb``).
    """
    from seqframe.runners.checkpoint import restore_checkpoint

    assigned: dict[str, np.ndarray] = {}
    cells = task.relative_names()
    for pattern, path in rules:
        regex = re.compile(pattern)
        ckpt = restore_checkpoint(path)
        for rel, cell in cells.items():
            if not (regex.fullmatch(rel) or regex.fullmatch(cell.name)):
                continue
            if cell.name not in ckpt.values:
                raise CheckpointMissingVariableError(f"{path} lacks variable {cell.name!r}")
            value = ckpt.values[cell.name]
            if value.shape != cell.shape:
                raise tn.ShapeMismatchError(f"{cell.name}: checkpoint {value.shape} vs {cell.shape}")
            assigned[rel] = value
    for rel, value in assigned.items():
        cells[rel].assign(value)
    return sorted(cells[r].name for r in assigned)
