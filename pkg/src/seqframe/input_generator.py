"""File-backed sequence input: tokenization, length bucketing, padded batches."""

from __future__ import annotations

import glob
import logging
import queue
import threading
from typing import Callable, Iterable, Iterator

import numpy as np

from seqframe.hyperparams import Params
from seqframe.layers.base_layer import BaseLayer
from seqframe.nested_map import NestedMap

log = logging.getLogger(__name__)

READER_KINDS = ("text",)
DROP = -1


class InputError(Exception):
    pass


class UnknownReaderKindError(InputError):
    pass


class NoFilesMatchedError(InputError):
    pass


class VocabMissingSpecialTokenError(InputError):
    pass


class RecordProcessingError(InputError):
    pass


def parse_file_pattern(pattern: str) -> tuple[str, list[str]]:
    """``"type:glob"`` -> ``(type, sorted matching files)``."""
    if ":" not in pattern:
        raise UnknownReaderKindError(f"file pattern {pattern!r} lacks a 'type:' prefix")
    kind, glob_pattern = pattern.split(":", 1)
    if kind not in READER_KINDS:
        raise UnknownReaderKindError(f"unknown reader kind {kind!r}; supported: {READER_KINDS}")
    files = sorted(glob.glob(glob_pattern))
    if not files:
        raise NoFilesMatchedError(f"no files match {glob_pattern!r}")
    return kind, files


def read_records(
    files: list[str],
    shuffle_seed: int | None = None,
    repeat: bool = False,
    process_record: Callable[[str], NestedMap] | None = None,
) -> Iterator:
    """Yields each line once per epoch, optionally shuffled and processed.

    With ``shuffle_seed`` set, epoch ``e`` is shuffled with ``shuffle_seed + e``.
    Errors raised by ``process_record`` are re-raised with file and line.
    """
    if not files:
        raise NoFilesMatchedError("no input files")
    records = []
    for path in files:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                records.append((path, lineno, line.rstrip("\n")))
    epoch = 0
    while True:
        order = np.arange(len(records))
        if shuffle_seed is not None:
            np.random.default_rng(shuffle_seed + epoch).shuffle(order)
        for i in order:
            path, lineno, line = records[i]
            if process_record is None:
                yield line
                continue
            try:
                yield process_record(line)
            except Exception as e:
                raise RecordProcessingError(f"{path}:{lineno}: {e}") from e
        epoch += 1
        if not repeat:
            return


class Vocab:
    """One token per line; a token's id is its zero-based line number."""

    def __init__(self, tokens: list[str], unk: str = "<unk>", bos: str = "<s>", eos: str = "</s>"):
        self.tokens = list(tokens)
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        for special in (unk, bos, eos):
            if special not in self.ids:
                raise VocabMissingSpecialTokenError(f"vocab lacks special token {special!r}")
        self.unk_id, self.bos_id, self.eos_id = self.ids[unk], self.ids[bos], self.ids[eos]

    @classmethod
    def load(cls, path: str, unk="<unk>", bos="<s>", eos="</s>") -> "Vocab":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tokens, unk, bos, eos)

    def __len__(self):
        return len(self.tokens)


def tokenizer_params(vocab_path: str = "") -> Params:
    p = Params()
    p.define("vocab_path", vocab_path, "Vocab file, one token per line.")
    p.define("unk_token", "<unk>", "Out-of-vocabulary token.")
    p.define("bos_token", "<s>", "Begin-of-sequence token.")
    p.define("eos_token", "</s>", "End-of-sequence token.")
    return p


class VocabFileTokenizer:
    """Whitespace tokenizer backed by a vocab file."""

    def __init__(self, p: Params):
        self.vocab = Vocab.load(p.vocab_path, p.unk_token, p.bos_token, p.eos_token)

    def tokenize(self, s: str, add_bos: bool = False, add_eos: bool = False) -> list[int]:
        v = self.vocab
        ids = [v.ids.get(tok, v.unk_id) for tok in s.split()]
        if add_bos:
            ids = [v.bos_id] + ids
        if add_eos:
            ids = ids + [v.eos_id]
        return ids

    def detokenize(self, ids: Iterable[int]) -> str:
        return " ".join(self.vocab.tokens[int(i)] for i in ids)


def bucket_select(length: int, bounds) -> int:
    """Smallest bucket whose inclusive upper bound fits ``length``, else DROP."""
    for i, bound in enumerate(bounds):
        if length <= bound:
            return i
    return DROP


def _pad_value(key: str) -> float:
    return 1 if key == "paddings" or key.endswith("_paddings") else 0


def pad_examples(examples: list[NestedMap], target_len: int, length_key: str = "length") -> NestedMap:
    """Stacks per-example NestedMaps into a batch.

    1-D fields are padded to ``target_len``: keys named ``paddings`` or ending in
    ``_paddings`` are padded with 1, every other field with 0.
    """
    template = examples[0]
    out = NestedMap()
    for path, first in template.flatten_items():
        key = path.split(".")[-1]
        values = [ex.get_path(path) for ex in examples]
        if np.ndim(first) == 1:
            arr = np.full((len(values), target_len), _pad_value(key), dtype=np.asarray(first).dtype)
            for r, v in enumerate(values):
                arr[r, : len(v)] = v
        else:
            arr = np.asarray(values)
        out.set_path(path, arr)
    return out


def assemble_batches(
    examples: Iterable[NestedMap],
    bounds,
    limits,
    length_key: str = "length",
    stats: dict | None = None,
) -> Iterator[NestedMap]:
    """Groups examples into per-bucket batches padded to the bucket bound.

    A bucket emits once it holds ``limits[i]`` examples. When the stream ends
    any partial buckets are flushed in bucket order. Over-length examples are
    dropped and counted in ``stats["dropped"]``.
    """
    bounds, limits = list(bounds), list(limits)
    if len(bounds) != len(limits):
        raise ValueError("bucket_upper_bound and bucket_batch_limit differ in length")
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ValueError("bucket_upper_bound must be strictly ascending")
    if stats is None:
        stats = {}
    stats.setdefault("dropped", 0)
    pending: list[list[NestedMap]] = [[] for _ in bounds]
    for ex in examples:
        i = bucket_select(int(ex[length_key]), bounds)
        if i == DROP:
            stats["dropped"] += 1
            log.debug("dropping example of length %d", int(ex[length_key]))
            continue
        pending[i].append(ex)
        if len(pending[i]) == limits[i]:
            yield pad_examples(pending[i], bounds[i], length_key)
            pending[i] = []
    for i, group in enumerate(pending):
        if group:
            yield pad_examples(group, bounds[i], length_key)


class BaseInputGenerator(BaseLayer):
    """Reads ``file_pattern``, maps records with :meth:`process_record`, and
    assembles bucketed batches. Subclasses implement :meth:`process_record`.
    """

    @classmethod
    def Params(cls):
        p = super().Params()
        p.name = "input"
        p.define("file_pattern", "", "Input files as 'type:glob'.")
        p.define("bucket_upper_bound", [], "Inclusive length bounds, ascending.")
        p.define("bucket_batch_limit", [], "Batch size per bucket.")
        p.define("tokenizer", tokenizer_params(), "Tokenizer params.")
        p.define("shuffle_seed", 0, "Shuffle seed; negative disables shuffling.")
        p.define("repeat", True, "Loop over the data forever.")
        p.define("queue_capacity", 16, "Batches buffered by the producer thread.")
        p.define("length_key", "length", "Per-example key holding the bucketing length.")
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        if len(p.bucket_upper_bound) != len(p.bucket_batch_limit) or not p.bucket_upper_bound:
            raise ValueError("bucket lists must be non-empty and equally long")
        bounds = p.bucket_upper_bound
        if any(b <= 0 for b in bounds) or any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("bucket_upper_bound must be positive and strictly ascending")
        if any(b <= 0 for b in p.bucket_batch_limit):
            raise ValueError("bucket_batch_limit entries must be positive")
        self.tokenizer = VocabFileTokenizer(p.tokenizer) if p.tokenizer.vocab_path else None
        self.stats = {"dropped": 0}
        self._queue: queue.Queue | None = None
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    def process_record(self, record: str) -> NestedMap:
        raise NotImplementedError

    def preprocess_batch(self, batch: NestedMap) -> NestedMap:
        return batch

    def batches(self) -> Iterator[NestedMap]:
        """Synchronous batch stream (finite unless ``repeat``)."""
        p = self.params
        _, files = parse_file_pattern(p.file_pattern)
        seed = p.shuffle_seed if p.shuffle_seed >= 0 else None
        records = read_records(files, seed, p.repeat, self.process_record)
        for batch in assemble_batches(
            records, p.bucket_upper_bound, p.bucket_batch_limit, p.length_key, self.stats
        ):
            yield self.preprocess_batch(batch)

    def get_next(self) -> NestedMap:
        """Next batch from a background producer thread (bounded queue)."""
        if self._thread is None:
            self._queue = queue.Queue(maxsize=self.params.queue_capacity)
            self._thread = threading.Thread(target=self._produce, daemon=True, name=f"{self.path}-producer")
            self._thread.start()
        item = self._queue.get()
        if isinstance(item, BaseException):
            raise item
        if item is None:
            raise StopIteration
        return item

    def _produce(self):
        try:
            for batch in self.batches():
                while not self._stop.is_set():
                    try:
                        self._queue.put(batch, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
            self._queue.put(None)
        except BaseException as e:  # handed to the consumer
            self._queue.put(e)

    def close(self):
        self._stop.set()


class Seq2SeqInput(BaseInputGenerator):
    """Lines ``source<TAB>target`` -> src/tgt id, padding, label, weight fields.

    Source ids end with EOS; target inputs start with BOS and labels end with
    EOS. The bucketing length is the longer of the two sides.
    """

    def process_record(self, record: str) -> NestedMap:
        if "\t" not in record:
            raise ValueError("expected 'source<TAB>target'")
        src, tgt = record.split("\t", 1)
        tok = self.tokenizer
        src_ids = tok.tokenize(src, add_eos=True)
        tgt_ids = tok.tokenize(tgt)
        ids = [tok.vocab.bos_id] + tgt_ids
        labels = tgt_ids + [tok.vocab.eos_id]
        n = len(ids)
        return NestedMap(
            src_ids=np.asarray(src_ids, np.int32),
            src_paddings=np.zeros(len(src_ids), np.float32),
            ids=np.asarray(ids, np.int32),
            labels=np.asarray(labels, np.int32),
            paddings=np.zeros(n, np.float32),
            weights=np.ones(n, np.float32),
            length=max(len(src_ids), n),
        )
