"""Training hyperparameters, learning-rate schedules, clipping, and optimizers.

Optimizers update numpy storage in place and keep their slots keyed by
variable name, so the same code applies updates in local training, on
parameter servers, and in the sync trainer client.
"""

from __future__ import annotations

import math

import numpy as np

from seqframe.hyperparams import Params


def optimizer_params(kind: str = "adam", beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> Params:
    p = Params()
    p.define("kind", kind, "sgd or adam.")
    p.define("beta1", beta1, "Adam first-moment decay.")
    p.define("beta2", beta2, "Adam second-moment decay.")
    p.define("epsilon", epsilon, "Adam denominator epsilon.")
    return p


def lr_schedule_params(kind: str = "constant", decay_rate: float = 1.0, decay_steps: int = 1) -> Params:
    p = Params()
    p.define("kind", kind, "constant or exponential.")
    p.define("decay_rate", decay_rate, "Multiplier per decay_steps (exponential).")
    p.define("decay_steps", decay_steps, "Steps per decay_rate factor (exponential).")
    return p


def train_params() -> Params:
    p = Params()
    p.define("learning_rate", 0.001, "Base learning rate.")
    p.define("optimizer", optimizer_params(), "Optimizer.")
    p.define("lr_schedule", lr_schedule_params(), "Learning-rate schedule.")
    p.define("clip_gradient_norm", 0.0, "Global-norm clipping threshold; 0 disables.")
    p.define("max_steps", 1000, "Training stops at this global step.")
    p.define("init_from_checkpoint_rules", [], "List of [regex, checkpoint_path] pairs.")
    return p


def validate_train_params(p: Params) -> None:
    if not p.learning_rate > 0:
        raise ValueError("train.learning_rate must be > 0")
    if not p.max_steps > 0:
        raise ValueError("train.max_steps must be > 0")
    if p.optimizer.kind not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {p.optimizer.kind!r}")
    if p.lr_schedule.kind not in ("constant", "exponential"):
        raise ValueError(f"unknown lr schedule {p.lr_schedule.kind!r}")


def lr_schedule(p: Params, global_step: int) -> float:
    """Learning rate at ``global_step`` for train params ``p``."""
    s = p.lr_schedule
    if s.kind == "constant":
        return p.learning_rate
    if s.kind == "exponential":
        return p.learning_rate * s.decay_rate ** (global_step / s.decay_steps)
    raise ValueError(f"unknown lr schedule {s.kind!r}")


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_by_global_norm(grads: dict, clip: float) -> tuple[dict, float]:
    """Scales all gradients so their joint L2 norm is at most ``clip``."""
    norm = global_norm(grads)
    if clip <= 0 or norm <= clip:
        return grads, norm
    scale = clip / norm
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}, norm


class Optimizer:
    """Applies one update per call; slots and update counts are per variable."""

    def __init__(self, train_p: Params):
        validate_train_params(train_p)
        self.p = train_p
        self.slots: dict[str, dict[str, np.ndarray]] = {}
        self.counts: dict[str, int] = {}

    def apply(self, name: str, var: np.ndarray, grad: np.ndarray, global_step: int) -> np.ndarray:
        """Returns the updated value of ``var`` (a new array)."""
        lr = lr_schedule(self.p, global_step)
        t = self.counts.get(name, 0) + 1
        self.counts[name] = t
        o = self.p.optimizer
        if o.kind == "sgd":
            return var - lr * grad
        slot = self.slots.get(name)
        if slot is None:
            slot = self.slots[name] = {"m": np.zeros_like(var), "v": np.zeros_like(var)}
        slot["m"] = o.beta1 * slot["m"] + (1 - o.beta1) * grad
        slot["v"] = o.beta2 * slot["v"] + (1 - o.beta2) * grad * grad
        m_hat = slot["m"] / (1 - o.beta1**t)
        v_hat = slot["v"] / (1 - o.beta2**t)
        return var - lr * m_hat / (np.sqrt(v_hat) + o.epsilon)

    def state(self) -> dict:
        return {"slots": self.slots, "counts": self.counts}

    def export_state(self, names=None) -> dict[str, np.ndarray]:
        """Checkpoint entries ``<var>/opt_m``, ``<var>/opt_v``, ``<var>/opt_t``."""
        out = {}
        for name, t in self.counts.items():
            if names is not None and name not in names:
                continue
            out[f"{name}/opt_t"] = np.asarray(t, np.int64)
            for k, v in self.slots.get(name, {}).items():
                out[f"{name}/opt_{k}"] = v.copy()
        return out

    def import_state(self, entries: dict, names=None) -> None:
        for key, value in entries.items():
            if "/opt_" not in key:
                continue
            name, slot = key.rsplit("/opt_", 1)
            if names is not None and name not in names:
                continue
            if slot == "t":
                self.counts[name] = int(value)
            else:
                self.slots.setdefault(name, {})[slot] = np.array(value)


def split_state(values: dict) -> tuple[dict, dict]:
    """Separates variable values from optimizer entries."""
    variables = {k: v for k, v in values.items() if "/opt_" not in k}
    slots = {k: v for k, v in values.items() if "/opt_" in k}
    return variables, slots
