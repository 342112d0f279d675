"""Deterministic synthetic data for the copy and reverse tasks.

Lines are ``source<TAB>target`` with space-separated letter tokens. The dev
split is drawn first and the train split excludes every dev source, so the
two never overlap.
"""

from __future__ import annotations

import os
import tempfile
import threading

import numpy as np

LETTERS = "abcdefghijklm"
SPECIALS = ("<unk>", "<s>", "</s>")
VOCAB = SPECIALS + tuple(LETTERS)

DEFAULT_SEED = 1234
NUM_TRAIN = 20000
NUM_DEV = 400
MIN_LEN, MAX_LEN = 2, 10

_lock = threading.Lock()


def sample_sequences(rng: np.random.Generator, n: int, exclude=frozenset(), min_len=MIN_LEN, max_len=MAX_LEN):
    """``n`` distinct letter tuples not in ``exclude``, in draw order."""
    seen, out = set(exclude), []
    while len(out) < n:
        length = int(rng.integers(min_len, max_len + 1))
        seq = tuple(LETTERS[i] for i in rng.integers(0, len(LETTERS), size=length))
        if seq in seen:
            continue
        seen.add(seq)
        out.append(seq)
    return out


def make_splits(seed: int = DEFAULT_SEED, num_train: int = NUM_TRAIN, num_dev: int = NUM_DEV):
    rng = np.random.default_rng(seed)
    dev = sample_sequences(rng, num_dev)
    train = sample_sequences(rng, num_train, exclude=frozenset(dev))
    return train, dev


def format_lines(seqs, reverse: bool = False) -> str:
    out = []
    for s in seqs:
        tgt = s[::-1] if reverse else s
        out.append(" ".join(s) + "\t" + " ".join(tgt) + "\n")
    return "".join(out)


def _write(path: str, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def write_data(data_dir: str, seed: int = DEFAULT_SEED, num_train: int = NUM_TRAIN, num_dev: int = NUM_DEV) -> None:
    os.makedirs(data_dir, exist_ok=True)
    train, dev = make_splits(seed, num_train, num_dev)
    _write(os.path.join(data_dir, "vocab.txt"), "".join(t + "\n" for t in VOCAB))
    for task, rev in (("copy", False), ("reverse", True)):
        _write(os.path.join(data_dir, f"{task}_train.txt"), format_lines(train, rev))
        _write(os.path.join(data_dir, f"{task}_dev.txt"), format_lines(dev, rev))
        _write(os.path.join(data_dir, f"{task}_test.txt"), format_lines(dev[: num_dev // 2], rev))


def default_data_dir() -> str:
    return os.environ.get("SEQFRAME_DATA_DIR") or os.path.join(tempfile.gettempdir(), "seqframe_toy_data")


def ensure_data(data_dir: str | None = None) -> str:
    """Generates the default splits into ``data_dir`` unless already present."""
    data_dir = data_dir or default_data_dir()
    with _lock:
        if not os.path.exists(os.path.join(data_dir, "reverse_test.txt")):
            write_data(data_dir)
    return data_dir
