import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqframe.hyperparams import (
    DuplicateKeyError,
    InvalidKeyNameError,
    MissingClsError,
    MissingNameError,
    Params,
    ParseError,
    SealedParamsError,
    TypeMismatchError,
    UnknownKeyError,
    apply_overrides,
    instantiate,
)
from seqframe.layers import FeedForward


def train_params():
    p = Params()
    p.define("name", "my_task", "")
    t = Params()
    t.define("learning_rate", 0.001, "Step size.")
    t.define("max_steps", 100, "")
    p.define("train", t, "")
    return p


def test_define_then_get_returns_default():
    p = Params().define("learning_rate", 0.001, "Step size.")
    assert p.learning_rate == 0.001
    assert p.get("learning_rate") == 0.001
    assert p.doc("learning_rate") == "Step size."


def test_duplicate_define():
    p = Params().define("learning_rate", 0.001)
    with pytest.raises(DuplicateKeyError):
        p.define("learning_rate", 0.1)


@pytest.mark.parametrize("bad", ["", "Caps", "1abc", "a.b", "a-b"])
def test_invalid_key_names(bad):
    with pytest.raises(InvalidKeyNameError):
        Params().define(bad, 1)


def test_nested_tree_retrievable():
    inp = Params().define("batch_size", 8).define("file_pattern", "text:/tmp/a")
    p = Params().define("task1", inp, "")
    assert p.task1 is inp
    assert p.get("task1.batch_size") == 8


def test_set_dotted_path():
    p = train_params()
    p.set("train.max_steps", 1000)
    assert p.get("train.max_steps") == 1000
    assert p.train.max_steps == 1000


def test_unknown_key_suggests_near_miss():
    p = train_params()
    with pytest.raises(UnknownKeyError, match="learning_rate"):
        p.get("train.learnig_rate")
    with pytest.raises(UnknownKeyError):
        p.no_such_key
    with pytest.raises(UnknownKeyError):
        p.no_such_key = 3


def test_type_mismatch():
    p = train_params()
    with pytest.raises(TypeMismatchError):
        p.set("name", 5)
    with pytest.raises(TypeMismatchError):
        p.set("train.max_steps", 2.5)
    with pytest.raises(TypeMismatchError):
        p.set("train.max_steps", True)
    # Ints are accepted for float keys and widened.
    p.set("train.learning_rate", 1)
    assert isinstance(p.train.learning_rate, float)


def test_sealed_rejects_writes():
    p = train_params().seal()
    assert p.sealed and p.train.sealed
    with pytest.raises(SealedParamsError):
        p.name = "other"
    with pytest.raises(SealedParamsError):
        p.train.max_steps = 3
    with pytest.raises(SealedParamsError):
        p.define("extra", 1)


def test_copy_is_deep_and_unsealed():
    p = train_params().seal()
    q = p.copy()
    assert not q.sealed
    q.set("train.max_steps", 7)
    assert p.train.max_steps == 100
    assert len(Params().copy()) == 0


def test_copy_of_three_levels_is_equal():
    inner = Params().define("depth", 3).define("tags", ["a", "b"])
    mid = Params().define("inner", inner).define("scale", 0.5)
    p = Params().define("mid", mid).define("name", "x")
    assert p.copy().to_text() == p.to_text()
    assert p.copy() == p


def test_to_text_rendering():
    p = Params().define("name", "my_task").define("lr", 0.001)
    assert p.to_text() == 'name : "my_task"\nlr : 0.001\n'
    assert Params().to_text() == ""


def test_to_text_nested_paths_and_kinds():
    p = train_params()
    p.define("cls", FeedForward)
    p.define("extra", None)
    p.define("flags", [1, "a", None])
    p.define("on", False)
    assert p.to_text() == (
        'name : "my_task"\n'
        "train.learning_rate : 0.001\n"
        "train.max_steps : 100\n"
        "cls : FeedForward\n"
        "extra : None\n"
        'flags : [1, "a", None]\n'
        "on : False\n"
    )


def test_overrides():
    p = train_params()
    apply_overrides(p, "train.learning_rate=0.01")
    assert p.train.learning_rate == 0.01
    apply_overrides(p, "train.max_steps=1;train.max_steps=2")
    assert p.train.max_steps == 2
    apply_overrides(p, "name=\"a;b\"\ntrain.max_steps = 5")
    assert p.name == "a;b" and p.train.max_steps == 5


def test_override_errors():
    p = train_params()
    with pytest.raises(ParseError):
        apply_overrides(p, "train.max_steps=ten")
    with pytest.raises(ParseError):
        apply_overrides(p, "train.max_steps")
    with pytest.raises(UnknownKeyError):
        apply_overrides(p, "train.max_stepz=3")


def test_override_class_by_name():
    p = Params().define("cls", FeedForward)
    apply_overrides(p, "cls=FeedForward")
    assert p.cls is FeedForward
    with pytest.raises(ParseError):
        apply_overrides(p, "cls=NoSuchLayer")


def test_instantiate_matches_direct_construction():
    p = FeedForward.Params().set(name="ff", input_dim=3, output_dim=2)
    a = instantiate(p)
    b = p.cls(p)
    assert a.params.to_text() == b.params.to_text()
    assert np.array_equal(a.vars.w.value, b.vars.w.value)


def test_instantiate_requires_cls_and_name():
    with pytest.raises(MissingClsError):
        instantiate(Params().define("cls", None).define("name", "x"))
    with pytest.raises(MissingNameError):
        instantiate(FeedForward.Params().set(input_dim=2, output_dim=2))


# Random trees for the round-trip properties.

keys = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)
scalars = st.one_of(
    st.integers(-1000, 1000),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.text(max_size=8),
    st.booleans(),
    st.none(),
    st.lists(st.integers(-5, 5), max_size=3),
)


def _build(tree):
    p = Params()
    for k, v in tree.items():
        p.define(k, _build(v) if isinstance(v, dict) else v)
    return p


trees = st.recursive(
    st.dictionaries(keys, scalars, max_size=4),
    lambda children: st.dictionaries(keys, st.one_of(scalars, children), max_size=4),
    max_leaves=12,
)


@given(trees)
def test_copy_round_trip_is_stable(tree):
    p = _build(tree)
    assert p.copy().to_text() == p.to_text()


@given(trees, st.data())
def test_get_returns_last_set_value(tree, data):
    p = _build(tree)
    flat = p.flatten()
    if not flat:
        return
    path, value = data.draw(st.sampled_from(flat))
    kind = p.declared_kind(path)
    new = {
        "int": st.integers(),
        "float": st.floats(allow_nan=False),
        "str": st.text(max_size=5),
        "bool": st.booleans(),
        "list": st.lists(st.integers(), max_size=3),
        "any": st.integers(),
    }[kind]
    writes = data.draw(st.lists(new, max_size=3))
    for w in writes:
        p.set(path, w)
    assert p.get(path) == (writes[-1] if writes else value)


@given(trees)
def test_overrides_round_trip_through_text(tree):
    p = _build(tree)
    q = p.copy()
    spec = "\n".join(line.replace(" : ", "=", 1) for line in p.to_text().splitlines())
    apply_overrides(q, spec)
    assert q.to_text() == p.to_text()
