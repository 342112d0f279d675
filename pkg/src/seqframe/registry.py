"""Named experiment configurations.

A configuration is a class with parameterless classmethod builders: ``Task``
(single-task) or ``Model`` (multi-task), plus ``Train`` and optionally ``Dev``
and ``Test`` returning input params. Its key is ``<task>.<param>.<ClassName>``
where ``<task>`` and ``<param>`` come from the declared module path
``...<task>.params.<param>``::

    @register_single_task_model
    class CopyLstm:
        @classmethod
        def Train(cls): ...
        @classmethod
        def Task(cls): ...
"""

from __future__ import annotations

import difflib
import threading
from dataclasses import dataclass, field
from typing import Callable

from seqframe.base_model import SingleTaskModel
from seqframe.hyperparams import Params, apply_overrides

DATASETS = ("Train", "Dev", "Test")


class RegistryError(Exception):
    pass


class DuplicateModelNameError(RegistryError):
    pass


class UnknownModelError(RegistryError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class UnknownDatasetError(RegistryError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass
class ModelEntry:
    key: str
    kind: str  # "single" or "multi"
    builders: dict[str, Callable[[], Params]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("single", "multi"):
            raise RegistryError(f"kind must be single or multi, got {self.kind!r}")
        if "Train" not in self.builders:
            raise RegistryError(f"{self.key}: a Train builder is required")
        main = "Task" if self.kind == "single" else "Model"
        if main not in self.builders:
            raise RegistryError(f"{self.key}: a {main} builder is required")


def key_for(module: str, class_name: str) -> str:
    """``a.tasks.toy.params.copy`` + ``CopyLstm`` -> ``toy.copy.CopyLstm``."""
    parts = module.split(".")
    hits = [i for i, part in enumerate(parts) if part == "params" and 0 < i < len(parts) - 1]
    if not hits:
        raise RegistryError(f"module path {module!r} is not of the form ...<task>.params.<param>")
    i = hits[-1]
    return f"{parts[i - 1]}.{parts[i + 1]}.{class_name}"


def _dataset_name(dataset: str) -> str:
    name = dataset.capitalize()
    if name not in DATASETS:
        raise UnknownDatasetError(f"dataset must be one of {DATASETS}, got {dataset!r}")
    return name


class ModelRegistry:
    def __init__(self):
        self._entries: dict[str, ModelEntry] = {}
        self._lock = threading.Lock()

    def register(self, entry: ModelEntry) -> ModelEntry:
        with self._lock:
            if entry.key in self._entries:
                raise DuplicateModelNameError(f"model {entry.key!r} is already registered")
            self._entries[entry.key] = entry
        return entry

    def _register_class(self, cls, kind: str, module: str | None, key: str | None):
        key = key or key_for(module or cls.__module__, cls.__name__)
        builders = {}
        for name in ("Task", "Model", *DATASETS):
            fn = getattr(cls, name, None)
            if fn is not None:
                builders[name] = fn
        self.register(ModelEntry(key, kind, builders))
        cls.registry_key = key
        return cls

    def register_single(self, cls=None, *, module: str | None = None, key: str | None = None):
        """Class decorator (bare or with ``module=``/``key=``) for single-task configs."""
        if cls is None:
            return lambda c: self._register_class(c, "single", module, key)
        return self._register_class(cls, "single", module, key)

    def register_multi(self, cls=None, *, module: str | None = None, key: str | None = None):
        if cls is None:
            return lambda c: self._register_class(c, "multi", module, key)
        return self._register_class(cls, "multi", module, key)

    def entry(self, name: str) -> ModelEntry:
        try:
            return self._entries[name]
        except KeyError:
            close = difflib.get_close_matches(name, list(self._entries), n=5, cutoff=0.5)
            hint = f"; did you mean {', '.join(close)}?" if close else ""
            raise UnknownModelError(f"unknown model {name!r}{hint}") from None

    def get_model_params(self, name: str, dataset: str = "Train", overrides: str = "") -> Params:
        entry = self.entry(name)
        ds = _dataset_name(dataset)
        if ds not in entry.builders:
            raise UnknownDatasetError(f"model {name!r} has no {ds} dataset")
        if entry.kind == "single":
            p = SingleTaskModel.Params()
            p.name = "model"
            task = entry.builders["Task"]()
            task.input = entry.builders[ds]()
            p.task = task
        else:
            p = entry.builders["Model"]()
            p.input = entry.builders[ds]()
        return apply_overrides(p, overrides) if overrides else p

    def list_models(self) -> list[str]:
        return sorted(self._entries)

    def __contains__(self, name) -> bool:
        return name in self._entries


_default = ModelRegistry()

register_single_task_model = _default.register_single
register_multi_task_model = _default.register_multi
get_model_params = _default.get_model_params
list_models = _default.list_models


def default_registry() -> ModelRegistry:
    return _default
