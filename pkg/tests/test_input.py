import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import simulate
from seqframe.input_generator import (
    DROP,
    NoFilesMatchedError,
    RecordProcessingError,
    Seq2SeqInput,
    UnknownReaderKindError,
    VocabFileTokenizer,
    VocabMissingSpecialTokenError,
    assemble_batches,
    bucket_select,
    parse_file_pattern,
    read_records,
    tokenizer_params,
)
from seqframe.hyperparams import instantiate
from seqframe.nested_map import NestedMap


@pytest.fixture
def vocab_file(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("<unk>\n<s>\n</s>\nhello\nworld\n")
    return str(path)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines))
    return str(path)


def test_file_pattern_lists_sorted_files(tmp_path):
    for name in ("train-2.txt", "train-0.txt", "train-1.txt", "other.txt"):
        (tmp_path / name).write_text("x\n")
    kind, files = parse_file_pattern(f"text:{tmp_path}/train-*.txt")
    assert kind == "text"
    assert [os.path.basename(f) for f in files] == ["train-0.txt", "train-1.txt", "train-2.txt"]


def test_file_pattern_errors(tmp_path):
    with pytest.raises(UnknownReaderKindError):
        parse_file_pattern("tfrecord:x")
    with pytest.raises(UnknownReaderKindError):
        parse_file_pattern("no_prefix")
    with pytest.raises(NoFilesMatchedError):
        parse_file_pattern(f"text:{tmp_path}/none/*")


def test_read_records_in_file_then_line_order(tmp_path):
    a = write_lines(tmp_path / "a.txt", ["a1", "a2"])
    b = write_lines(tmp_path / "b.txt", ["b1", "b2"])
    assert list(read_records([a, b])) == ["a1", "a2", "b1", "b2"]


def test_read_records_shuffle_is_seeded(tmp_path):
    f = write_lines(tmp_path / "a.txt", [str(i) for i in range(50)])
    one = list(read_records([f], shuffle_seed=3))
    assert one == list(read_records([f], shuffle_seed=3))
    assert sorted(one, key=int) == [str(i) for i in range(50)]
    assert one != list(read_records([f], shuffle_seed=4))


def test_read_records_repeat_reshuffles_each_epoch(tmp_path):
    f = write_lines(tmp_path / "a.txt", [str(i) for i in range(20)])
    it = read_records([f], shuffle_seed=0, repeat=True)
    first = [next(it) for _ in range(20)]
    second = [next(it) for _ in range(20)]
    assert sorted(first) == sorted(second) and first != second


def test_processing_error_names_file_and_line(tmp_path):
    f = write_lines(tmp_path / "data.txt", ["ok", "ok", "bad", "ok"])

    def hook(line):
        if line == "bad":
            raise ValueError("boom")
        return line

    with pytest.raises(RecordProcessingError, match=r"data\.txt:3"):
        list(read_records([f], process_record=hook))


def test_tokenizer(vocab_file):
    tok = VocabFileTokenizer(tokenizer_params(vocab_file))
    assert tok.tokenize("hello world", add_bos=True, add_eos=True) == [1, 3, 4, 2]
    assert tok.tokenize("hello mars", add_bos=True, add_eos=True) == [1, 3, 0, 2]


@given(st.lists(st.sampled_from(["hello", "world"]), max_size=10))
def test_detokenize_inverts_tokenize(words):
    path = os.path.join(os.environ.get("TMPDIR", "/tmp"), "seqframe_test_vocab.txt")
    with open(path, "w") as f:
        f.write("<unk>\n<s>\n</s>\nhello\nworld\n")
    tok = VocabFileTokenizer(tokenizer_params(path))
    s = " ".join(words)
    assert tok.detokenize(tok.tokenize(s)) == s


def test_vocab_needs_special_tokens(tmp_path):
    path = write_lines(tmp_path / "v.txt", ["<unk>", "a"])
    with pytest.raises(VocabMissingSpecialTokenError):
        VocabFileTokenizer(tokenizer_params(path))


def test_bucket_select():
    assert bucket_select(5, [10, 20]) == 0
    assert bucket_select(10, [10, 20]) == 0
    assert bucket_select(20, [10, 20]) == 1
    assert bucket_select(21, [10, 20]) == DROP


def ex(uid, length):
    return NestedMap(uid=uid, paddings=np.zeros(length, np.float32), length=length)


def test_batch_pads_to_bucket_bound():
    batches = list(assemble_batches([ex(0, 5), ex(1, 5)], [10, 20], [2, 2]))
    assert len(batches) == 1
    b = batches[0]
    assert b.paddings.shape == (2, 10)
    assert np.array_equal(b.paddings[0], [0] * 5 + [1] * 5)


def test_partial_bucket_flushed_at_end():
    batches = list(assemble_batches([ex(0, 3)], [10], [4]))
    assert len(batches) == 1 and batches[0].uid.tolist() == [0]


def test_alternating_lengths_fill_buckets_independently():
    stream = [ex(i, 5 if i % 2 == 0 else 15) for i in range(10)]
    batches = list(assemble_batches(stream, [10, 20], [2, 2]))
    assert [b.uid.tolist() for b in batches] == [[0, 2], [1, 3], [4, 6], [5, 7], [8], [9]]


def test_invalid_bucket_config():
    with pytest.raises(ValueError):
        list(assemble_batches([], [10, 5], [1, 1]))
    with pytest.raises(ValueError):
        list(assemble_batches([], [10], [1, 1]))


@given(
    st.lists(st.integers(1, 30), max_size=200),
    st.lists(st.integers(1, 25), min_size=1, max_size=4, unique=True).map(sorted),
    st.data(),
)
def test_bucketing_matches_simulation(lengths, bounds, data):
    limits = data.draw(st.lists(st.integers(1, 6), min_size=len(bounds), max_size=len(bounds)))
    stats = {}
    got = [
        (b.paddings.shape[1], b.uid.tolist())
        for b in assemble_batches((ex(i, n) for i, n in enumerate(lengths)), bounds, limits, stats=stats)
    ]
    want, dropped = simulate(lengths, bounds, limits)
    assert got == want
    assert stats["dropped"] == dropped


def seq2seq_params(tmp_path, vocab_file, **kw):
    data = write_lines(tmp_path / "d.txt", ["hello world\tworld hello", "hello\thello", "world world world\tworld"])
    p = Seq2SeqInput.Params().set(
        file_pattern=f"text:{data}", bucket_upper_bound=[3, 5], bucket_batch_limit=[2, 2], repeat=False, shuffle_seed=-1
    )
    p.tokenizer.vocab_path = vocab_file
    return p.set(**kw)


def test_seq2seq_record_fields(tmp_path, vocab_file):
    gen = instantiate(seq2seq_params(tmp_path, vocab_file))
    ex = gen.process_record("hello world\tworld")
    assert ex.src_ids.tolist() == [3, 4, 2]
    assert ex.ids.tolist() == [1, 4]
    assert ex.labels.tolist() == [4, 2]
    assert ex.length == 3


def test_seq2seq_batches(tmp_path, vocab_file):
    gen = instantiate(seq2seq_params(tmp_path, vocab_file))
    batches = list(gen.batches())
    assert [b.src_ids.shape for b in batches] == [(2, 3), (1, 5)]
    b = batches[0]
    assert b.src_paddings.tolist() == [[0, 0, 0], [0, 0, 1]]
    assert b.weights.tolist() == [[1, 1, 1], [1, 1, 0]]


def test_producer_thread_delivers_then_stops(tmp_path, vocab_file):
    gen = instantiate(seq2seq_params(tmp_path, vocab_file))
    got = [gen.get_next(), gen.get_next()]
    assert [b.src_ids.shape[0] for b in got] == [2, 1]
    with pytest.raises(StopIteration):
        gen.get_next()
    gen.close()


def test_producer_surfaces_errors(tmp_path, vocab_file):
    bad = write_lines(tmp_path / "bad.txt", ["no tab here"])
    gen = instantiate(seq2seq_params(tmp_path, vocab_file, file_pattern=f"text:{bad}"))
    with pytest.raises(RecordProcessingError, match="bad.txt:1"):
        gen.get_next()
