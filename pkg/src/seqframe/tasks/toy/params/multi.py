"""``toy.multi.CopyReverse``: copy and reverse tasks sharing encoder variables."""

from __future__ import annotations

from seqframe.base_model import MultiTaskModel
from seqframe.hyperparams import Params
from seqframe.registry import register_multi_task_model
from seqframe.tasks.toy.params.copy import seq2seq_task, toy_input

TASKS = ("copy", "reverse")


def _inputs(split: str) -> Params:
    p = Params()
    for i, name in enumerate(TASKS):
        p.define(name, toy_input(split, task=name, shuffle_seed=i), f"{name} input.")
    return p


@register_multi_task_model
class CopyReverse:
    @classmethod
    def Train(cls):
        return _inputs("train")

    @classmethod
    def Dev(cls):
        return _inputs("dev")

    @classmethod
    def Model(cls):
        p = MultiTaskModel.Params()
        p.name = "multi"
        for name in TASKS:
            p.task_params.define(name, seq2seq_task(name), f"{name} task.")
            p.task_probs.define(name, 0.5, f"Sampling weight of {name}.")
        p.sharing.kind = "regex_shared"
        p.sharing.patterns = [".*enc.*"]
        p.train.learning_rate = 0.01
        p.train.clip_gradient_norm = 5.0
        p.train.lr_schedule.kind = "exponential"
        p.train.lr_schedule.decay_rate = 0.5
        p.train.lr_schedule.decay_steps = 600
        p.train.max_steps = 2000
        return p
