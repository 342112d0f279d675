"""Explicit-key hierarchical hyperparameter containers.

Every configurable object in the framework is built from a :class:`Params`
tree. Keys must be declared with :meth:`Params.define` before they can be read
or written, which turns typos in experiment configurations into immediate
errors instead of silently ignored settings.
"""

from __future__ import annotations

import ast
import copy
import json
import re
from typing import Any, Iterator

_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*$")

# Name -> class for every class that may be referenced from a ``cls`` key.
_CLASS_REGISTRY: dict[str, type] = {}


class ParamsError(Exception):
    pass


class DuplicateKeyError(ParamsError):
    pass


class SealedParamsError(ParamsError):
    pass


class InvalidKeyNameError(ParamsError):
    pass


class UnknownKeyError(ParamsError, AttributeError):
    pass


class TypeMismatchError(ParamsError, TypeError):
    pass


class ParseError(ParamsError, ValueError):
    pass


class MissingClsError(ParamsError):
    pass


class MissingNameError(ParamsError):
    pass


def register_class(cls: type) -> type:
    """Makes ``cls`` addressable by name in overrides and canonical text."""
    _CLASS_REGISTRY[cls.__name__] = cls
    return cls


def lookup_class(name: str) -> type:
    try:
        return _CLASS_REGISTRY[name]
    except KeyError:
        raise ParseError(f"no registered class named {name!r}") from None


class _Entry:
    __slots__ = ("value", "doc", "kind")

    def __init__(self, value, doc, kind):
        self.value = value
        self.doc = doc
        self.kind = kind


def _kind_of(value) -> str:
    if value is None:
        return "any"
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, str):
        return "str"
    if isinstance(value, (list, tuple)):
        return "list"
    if isinstance(value, Params):
        return "params"
    if isinstance(value, type):
        return "cls"
    raise TypeMismatchError(f"unsupported param value type: {type(value).__name__}")


def _coerce(key: str, kind: str, value):
    """Checks ``value`` against the declared kind; returns the stored form."""
    if value is None or kind == "any":
        if isinstance(value, tuple):
            value = list(value)
        if value is not None:
            _kind_of(value)
        return value
    ok = {
        "bool": lambda v: isinstance(v, bool),
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "list": lambda v: isinstance(v, (list, tuple)),
        "params": lambda v: isinstance(v, Params),
        "cls": lambda v: isinstance(v, type),
    }[kind](value)
    if not ok:
        raise TypeMismatchError(
            f"key {key!r} expects {kind}, got {type(value).__name__} ({value!r})"
        )
    if kind == "float":
        return float(value)
    if kind == "list":
        return list(value)
    return value


def render_value(value) -> str:
    if value is None:
        return "None"
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, type):
        return value.__name__
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(render_value(v) for v in value) + "]"
    if isinstance(value, Params):
        return "{" + ", ".join(f"{k}: {render_value(v)}" for k, v in value.items()) + "}"
    return repr(value)


class Params:
    """Ordered tree of explicitly declared ``(key, value, doc)`` entries.

    Values are read and written with attribute syntax (``p.train.max_steps``)
    or with dotted paths through :meth:`get` / :meth:`set`. Touching a key that
    was never defined raises :class:`UnknownKeyError`.
    """

    def __init__(self):
        object.__setattr__(self, "_entries", {})
        object.__setattr__(self, "_sealed", False)

    # Definition.

    def define(self, key: str, default: Any, doc: str = "") -> "Params":
        if self._sealed:
            raise SealedParamsError(f"cannot define {key!r} on sealed params")
        if not isinstance(key, str) or not _KEY_RE.match(key):
            raise InvalidKeyNameError(f"invalid key name: {key!r}")
        if key in self._entries:
            raise DuplicateKeyError(f"key {key!r} already defined")
        kind = _kind_of(default)
        self._entries[key] = _Entry(_coerce(key, kind, default), doc, kind)
        return self

    def seal(self) -> "Params":
        """Freezes this tree: no new keys and no value changes."""
        object.__setattr__(self, "_sealed", True)
        for e in self._entries.values():
            if isinstance(e.value, Params):
                e.value.seal()
        return self

    @property
    def sealed(self) -> bool:
        return self._sealed

    # Access.

    def __getattr__(self, key):
        if key.startswith("__"):
            raise AttributeError(key)
        entries = object.__getattribute__(self, "_entries")
        if key not in entries:
            raise UnknownKeyError(_unknown_msg(key, entries))
        return entries[key].value

    def __setattr__(self, key, value):
        self._set_local(key, value)

    def _set_local(self, key, value):
        if key not in self._entries:
            raise UnknownKeyError(_unknown_msg(key, self._entries))
        if self._sealed:
            raise SealedParamsError(f"cannot set {key!r} on sealed params")
        e = self._entries[key]
        e.value = _coerce(key, e.kind, value)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def _resolve(self, path: str) -> tuple["Params", str]:
        parts = path.split(".")
        node = self
        for i, part in enumerate(parts[:-1]):
            if part not in node._entries:
                raise UnknownKeyError(_unknown_msg(".".join(parts[: i + 1]), node._entries))
            node = node._entries[part].value
            if not isinstance(node, Params):
                raise UnknownKeyError(f"{'.'.join(parts[: i + 1])!r} is not a nested Params")
        return node, parts[-1]

    def get(self, path: str):
        node, key = self._resolve(path)
        if key not in node._entries:
            raise UnknownKeyError(_unknown_msg(path, node._entries))
        return node._entries[key].value

    def set(self, path: str | None = None, value=None, **kwargs) -> "Params":
        if path is not None:
            node, key = self._resolve(path)
            node._set_local(key, value)
        for k, v in kwargs.items():
            self._set_local(k, v)
        return self

    def doc(self, path: str) -> str:
        node, key = self._resolve(path)
        if key not in node._entries:
            raise UnknownKeyError(_unknown_msg(path, node._entries))
        return node._entries[key].doc

    def declared_kind(self, path: str) -> str:
        node, key = self._resolve(path)
        if key not in node._entries:
            raise UnknownKeyError(_unknown_msg(path, node._entries))
        return node._entries[key].kind

    def keys(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, Any]]:
        for k, e in self._entries.items():
            yield k, e.value

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    # Copy and comparison.

    def copy(self) -> "Params":
        """Deep, unsealed copy."""
        out = Params()
        for k, e in self._entries.items():
            v = e.value
            if isinstance(v, Params):
                v = v.copy()
            elif isinstance(v, list):
                v = copy.deepcopy(v)
            out._entries[k] = _Entry(v, e.doc, e.kind)
        return out

    def __deepcopy__(self, memo):
        return self.copy()

    def __eq__(self, other):
        return isinstance(other, Params) and self.to_text() == other.to_text()

    def __hash__(self):
        return id(self)

    # Serialization.

    def flatten(self, prefix: str = "") -> list[tuple[str, Any]]:
        out = []
        for k, e in self._entries.items():
            path = f"{prefix}{k}"
            if isinstance(e.value, Params):
                out.extend(e.value.flatten(path + "."))
            else:
                out.append((path, e.value))
        return out

    def to_text(self) -> str:
        return "".join(f"{path} : {render_value(v)}\n" for path, v in self.flatten())

    def __repr__(self):
        return f"Params(\n{self.to_text()})"

    # Instantiation.

    def instantiate(self):
        return instantiate(self)


def _unknown_msg(key, entries) -> str:
    import difflib

    near = difflib.get_close_matches(key.split(".")[-1], list(entries), n=3)
    hint = f"; did you mean {near}?" if near else ""
    return f"unknown param key {key!r}{hint}"


def parse_literal(kind: str, literal: str):
    """Parses an override literal according to a declared key kind."""
    text = literal.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1"):
                return True
            if low in ("false", "0"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
                return ast.literal_eval(text)
            return text
        if kind == "list":
            value = ast.literal_eval(text)
            if not isinstance(value, (list, tuple)):
                raise ValueError(text)
            return list(value)
        if kind == "cls":
            return lookup_class(text)
        if kind == "params":
            raise ValueError("nested Params cannot be overridden wholesale")
        if kind == "any":
            if text == "None":
                return None
            if text in _CLASS_REGISTRY:
                return _CLASS_REGISTRY[text]
            try:
                return ast.literal_eval(text)
            except (ValueError, SyntaxError):
                return text
    except ParseError:
        raise
    except (ValueError, SyntaxError) as e:
        raise ParseError(f"cannot parse {literal!r} as {kind}: {e}") from None
    raise ParseError(f"unknown kind {kind}")


def _split_overrides(spec: str) -> list[str]:
    """Splits on ``;`` and newlines, ignoring separators inside quotes."""
    parts, buf, quote = [], [], None
    for ch in spec:
        if quote:
            buf.append(ch)
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
            buf.append(ch)
        elif ch in ";\n":
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return [p.strip() for p in parts if p.strip()]


def apply_overrides(p: Params, spec: str) -> Params:
    """Applies ``path=literal;path=literal`` assignments in order (in place)."""
    for assignment in _split_overrides(spec or ""):
        if "=" not in assignment:
            raise ParseError(f"malformed override {assignment!r}, expected path=value")
        path, literal = assignment.split("=", 1)
        path = path.strip()
        kind = p.declared_kind(path)
        if kind == "any":
            current = p.get(path)
            if current is not None:
                kind = _kind_of(current)
        p.set(path, parse_literal(kind, literal))
    return p


def instantiate(p: Params):
    """Builds ``p.cls(p)``; identical to constructing the class directly."""
    if "cls" not in p or p.cls is None:
        raise MissingClsError("params have no cls to instantiate")
    if "name" not in p or not p.name:
        raise MissingNameError(f"{p.cls.__name__} params need a non-empty name")
    return p.cls(p)
