import numpy as np

from seqframe.registry import default_registry, get_model_params
from seqframe.runners import checkpoint as ckpt_lib
from seqframe.runners import jobs
from seqframe.runners.cluster import ClusterSpec
from seqframe.runners.hosts import build_model
from seqframe.tasks.toy import data


def test_registry_keys_present():
    names = default_registry().list_models()
    assert "toy.copy.CopyLstm" in names
    assert "toy.multi.CopyReverse" in names


def test_generator_is_reproducible(tmp_path):
    data.write_data(str(tmp_path / "a"), seed=7, num_train=300, num_dev=50)
    data.write_data(str(tmp_path / "b"), seed=7, num_train=300, num_dev=50)
    for name in ("vocab.txt", "copy_train.txt", "copy_dev.txt", "reverse_train.txt", "reverse_dev.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    data.write_data(str(tmp_path / "c"), seed=8, num_train=300, num_dev=50)
    assert (tmp_path / "a" / "copy_train.txt").read_bytes() != (tmp_path / "c" / "copy_train.txt").read_bytes()


def test_dev_and_train_are_disjoint():
    train, dev = data.make_splits()
    assert len(train) == data.NUM_TRAIN and len(dev) == data.NUM_DEV
    assert not set(train) & set(dev)
    assert all(data.MIN_LEN <= len(s) <= data.MAX_LEN for s in train + dev)


def test_written_files_match_splits():
    d = data.ensure_data()
    _, dev = data.make_splits()
    with open(f"{d}/reverse_dev.txt") as f:
        rows = [line.rstrip("\n").split("\t") for line in f]
    assert [r[0].split() for r in rows] == [list(s) for s in dev]
    assert all(r[1].split() == r[0].split()[::-1] for r in rows)


def test_copy_reverse_shares_encoder_cells():
    model = build_model(get_model_params("toy.multi.CopyReverse", "Train"))
    copy, rev = (model.tasks[n].relative_names() for n in ("copy", "reverse"))
    assert copy.keys() == rev.keys()
    shared = [k for k in copy if "enc" in k]
    assert shared
    for k in copy:
        assert (copy[k] is rev[k]) == (k in shared), k


def _smoke(tmp_path, key, overrides):
    p = get_model_params(key, "Train", overrides)
    dev = get_model_params(key, "Dev", overrides)
    spec = ClusterSpec(logdir=str(tmp_path), checkpoint_every_steps=1, poll_interval=0.02)
    result = jobs.run_cluster(spec, p, {"dev": dev}, jobs.ALL_JOBS)
    assert result.failures == []
    assert [s for s, _ in ckpt_lib.read_index(str(tmp_path))] == [0, 1]
    values = ckpt_lib.restore_checkpoint(ckpt_lib.latest_checkpoint(str(tmp_path))).values
    assert all(np.isfinite(v).all() for v in values.values())
    with open(tmp_path / "eval_dev.txt") as f:
        assert {int(line.split("\t")[0]) for line in f} == {0, 1}


def test_copy_smoke(tmp_path):
    _smoke(tmp_path, "toy.copy.CopyLstm", "task.train.max_steps=1")


def test_copy_reverse_smoke(tmp_path):
    _smoke(tmp_path, "toy.multi.CopyReverse", "train.max_steps=1")
