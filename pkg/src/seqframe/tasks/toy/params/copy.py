"""``toy.copy.CopyLstm``: reproduce the source sequence."""

from __future__ import annotations

import os

from seqframe.hyperparams import Params
from seqframe.input_generator import Seq2SeqInput
from seqframe.registry import register_single_task_model
from seqframe.seq2seq import Seq2SeqTask
from seqframe.tasks.toy import data


def toy_input(split: str, task: str = "copy", batch_size: int = 64, shuffle_seed: int = 0) -> Params:
    d = data.ensure_data()
    p = Seq2SeqInput.Params()
    p.file_pattern = "text:" + os.path.join(d, f"{task}_{split}.txt")
    p.tokenizer.vocab_path = os.path.join(d, "vocab.txt")
    p.bucket_upper_bound = [6, 11]
    p.bucket_batch_limit = [batch_size, batch_size]
    if split == "train":
        p.shuffle_seed = shuffle_seed
        p.repeat = True
    else:
        p.shuffle_seed = -1
        p.repeat = False
    return p


def seq2seq_task(name: str) -> Params:
    p = Seq2SeqTask.Params()
    p.name = name
    p.vocab_size = len(data.VOCAB)
    p.max_decode_len = data.MAX_LEN + 2
    tp = p.train
    tp.learning_rate = 0.01
    tp.clip_gradient_norm = 5.0
    tp.lr_schedule.kind = "exponential"
    tp.lr_schedule.decay_rate = 0.5
    tp.lr_schedule.decay_steps = 600
    tp.max_steps = 3000
    return p


@register_single_task_model
class CopyLstm:
    @classmethod
    def Train(cls):
        return toy_input("train")

    @classmethod
    def Dev(cls):
        return toy_input("dev")

    @classmethod
    def Test(cls):
        return toy_input("test")

    @classmethod
    def Task(cls):
        return seq2seq_task("copy")
