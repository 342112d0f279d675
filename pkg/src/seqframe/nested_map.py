"""String-keyed tree of leaves used to move data between layers and runners."""

from __future__ import annotations

import re
from typing import Any, Callable

_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class LengthMismatchError(ValueError):
    pass


class NestedMap(dict):
    """A dict with attribute access whose values are leaves or NestedMaps.

    Traversal order (:meth:`flatten`) sorts keys at every level, so two maps
    with the same keys always flatten identically regardless of insertion
    order.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        for k in self.keys():
            _check_key(k)

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError:
            raise AttributeError(f"NestedMap has no key {key!r}") from None

    def __setattr__(self, key, value):
        self[key] = value

    def __setitem__(self, key, value):
        _check_key(key)
        super().__setitem__(key, value)

    def __delattr__(self, key):
        del self[key]

    def copy(self) -> "NestedMap":
        """Copies the tree structure; leaves are shared."""
        return NestedMap({k: v.copy() if isinstance(v, NestedMap) else v for k, v in self.items()})

    def flatten(self) -> list:
        return [leaf for _, leaf in self.flatten_items()]

    def flatten_items(self, prefix: str = "") -> list[tuple[str, Any]]:
        out = []
        for k in sorted(self.keys()):
            v = self[k]
            path = f"{prefix}{k}"
            if isinstance(v, NestedMap):
                out.extend(v.flatten_items(path + "."))
            else:
                out.append((path, v))
        return out

    def pack(self, leaves) -> "NestedMap":
        leaves = list(leaves)
        n = len(self.flatten_items())
        if len(leaves) != n:
            raise LengthMismatchError(f"template has {n} leaves, got {len(leaves)}")
        it = iter(leaves)
        return self._pack(it)

    def _pack(self, it) -> "NestedMap":
        out = NestedMap()
        for k in sorted(self.keys()):
            v = self[k]
            out[k] = v._pack(it) if isinstance(v, NestedMap) else next(it)
        return out

    def transform(self, fn: Callable[[Any], Any]) -> "NestedMap":
        return self.pack([fn(v) for v in self.flatten()])

    def structure(self) -> "NestedMap":
        return self.transform(lambda _: None)

    def is_compatible(self, other) -> bool:
        if not isinstance(other, NestedMap):
            return False
        a = [p for p, _ in self.flatten_items()]
        b = [p for p, _ in other.flatten_items()]
        return a == b

    def get_path(self, path: str):
        node = self
        for part in path.split("."):
            node = node[part]
        return node

    def set_path(self, path: str, value) -> None:
        parts = path.split(".")
        node = self
        for part in parts[:-1]:
            if part not in node:
                node[part] = NestedMap()
            node = node[part]
        node[parts[-1]] = value

    def __repr__(self):
        return "NestedMap(" + ", ".join(f"{k}={v!r}" for k, v in self.items()) + ")"


# Keys that would shadow dict or NestedMap methods under attribute access.
_RESERVED = frozenset(k for k in dir(NestedMap) if not k.startswith("_"))


def _check_key(key):
    if not isinstance(key, str) or not _KEY_RE.match(key):
        raise KeyError(f"invalid NestedMap key: {key!r}")
    if key in _RESERVED:
        raise KeyError(f"reserved NestedMap key: {key!r}")


def flatten(m: NestedMap) -> list[tuple[str, Any]]:
    """``(dotted_path, leaf)`` pairs in depth-first, key-sorted order."""
    return m.flatten_items()


def pack(template: NestedMap, leaves) -> NestedMap:
    return template.pack(leaves)


def map_leaves(m: NestedMap, fn: Callable[[Any], Any]) -> NestedMap:
    return m.transform(fn)


def structure(m: NestedMap) -> NestedMap:
    return m.structure()


def from_dict(d: dict) -> NestedMap:
    return NestedMap({k: from_dict(v) if isinstance(v, dict) else v for k, v in d.items()})
