"""Binary checkpoints and the ``checkpoints.txt`` index.

File layout (all integers little-endian)::

    b"SQFR" | version u32 (=1) | count u64
    per entry: name_len u32 | name utf-8 | dtype u8 | rank u8 | dims u64*rank | raw values

Entries are sorted by name. The global step is stored as the int64 scalar
entry ``global_step``. Files are written to a temp name and renamed into
place; the index is rewritten the same way afterwards, so a reader going
through the index never sees a partial checkpoint.
"""

from __future__ import annotations

import os
import struct
import tempfile
import threading
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SQFR"
VERSION = 1
INDEX_FILE = "checkpoints.txt"
STEP_KEY = "global_step"

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("<i4")}
_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _DTYPES.items()}

_index_lock = threading.Lock()


class CorruptCheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    step: int
    values: dict[str, np.ndarray] = field(default_factory=dict)


def _dtype_code(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("=")
    if dt not in _CODES:
        raise TypeError(f"unsupported checkpoint dtype {arr.dtype}")
    return _CODES[dt]


def serialize(step: int, values: dict) -> bytes:
    entries = dict(values)
    entries[STEP_KEY] = np.asarray(step, np.int64)
    chunks = [MAGIC, struct.pack("<IQ", VERSION, len(entries))]
    for name in sorted(entries):
        arr = np.asarray(entries[name])
        code = _dtype_code(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(chunks)


def deserialize(data: bytes) -> Checkpoint:
    def need(pos, n):
        if pos + n > len(data):
            raise CorruptCheckpointError(f"truncated checkpoint at byte {pos} (need {n})")

    need(0, 16)
    if data[:4] != MAGIC:
        raise CorruptCheckpointError("bad magic")
    version, count = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise CorruptCheckpointError(f"unsupported version {version}")
    pos = 16
    values = {}
    for _ in range(count):
        need(pos, 4)
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        need(pos, n + 2)
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        code, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        if code not in _DTYPES:
            raise CorruptCheckpointError(f"unknown dtype code {code}")
        need(pos, 8 * rank)
        shape = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        need(pos, nbytes)
        arr = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape)
        values[name] = arr.astype(dt.newbyteorder("="), copy=True)
        pos += nbytes
    if pos != len(data):
        raise CorruptCheckpointError(f"{len(data) - pos} trailing bytes")
    if STEP_KEY not in values:
        raise CorruptCheckpointError("missing global_step entry")
    step = int(values.pop(STEP_KEY))
    return Checkpoint(step, values)


def _atomic_write(path: str, data: bytes, fsync: bool) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            if fsync:
                f.flush()
                os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_filename(step: int) -> str:
    return f"ckpt-{step:010d}.ckpt"


def read_index(logdir: str) -> list[tuple[int, str]]:
    """``(step, path)`` pairs in ascending step order."""
    path = os.path.join(logdir, INDEX_FILE)
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except FileNotFoundError:
        return []
    out = {}
    for line in lines:
        if not line.strip():
            continue
        step, name = line.split("\t", 1)
        out[int(step)] = os.path.join(logdir, name)
    return sorted(out.items())


def save_checkpoint(logdir: str, step: int, values: dict, fsync: bool = True) -> str:
    os.makedirs(logdir, exist_ok=True)
    name = checkpoint_filename(step)
    path = os.path.join(logdir, name)
    _atomic_write(path, serialize(step, values), fsync)
    with _index_lock:
        entries = [(s, os.path.basename(p)) for s, p in read_index(logdir) if s != step]
        entries.append((step, name))
        entries.sort()
        text = "".join(f"{s}\t{n}\n" for s, n in entries)
        _atomic_write(os.path.join(logdir, INDEX_FILE), text.encode("utf-8"), fsync)
    return path


def restore_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        return deserialize(f.read())


def latest_checkpoint(logdir: str) -> str | None:
    entries = read_index(logdir)
    return entries[-1][1] if entries else None
