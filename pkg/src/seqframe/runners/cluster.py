"""Cluster layout and variable placement."""

from __future__ import annotations

from dataclasses import dataclass, field

MODES = ("local", "sync", "async")


@dataclass
class ClusterSpec:
    mode: str = "local"
    num_workers: int = 1
    num_ps: int = 0
    logdir: str = ""
    checkpoint_every_steps: int = 100
    eval_datasets: list = field(default_factory=lambda: ["dev"])
    poll_interval: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        if self.mode == "async" and self.num_ps < 1:
            raise ValueError("async training needs at least one parameter server")
        if self.mode == "sync" and self.num_ps != 0:
            raise ValueError("sync training has no parameter servers (workers hold the variables)")
        if self.checkpoint_every_steps < 1:
            raise ValueError("checkpoint_every_steps must be >= 1")


@dataclass
class PlacementState:
    """Greedy least-bytes-allocated placement onto ``num_shards`` servers."""

    num_shards: int
    allocated: list = field(default_factory=list)
    assignment: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def __post_init__(self):
        if self.num_shards < 1:
            raise ValueError("need at least one shard")
        if not self.allocated:
            self.allocated = [0] * self.num_shards

    def place(self, name: str, byte_size: int) -> int:
        if name in self.assignment:
            return self.assignment[name]
        if byte_size <= 0:
            raise ValueError("byte_size must be > 0")
        idx = min(range(self.num_shards), key=lambda i: (self.allocated[i], i))
        self.allocated[idx] += byte_size
        self.assignment[name] = idx
        self.log.append((name, byte_size))
        return idx


def place_variable(state: PlacementState, name: str, byte_size: int) -> int:
    return state.place(name, byte_size)


def replay(num_shards: int, log) -> PlacementState:
    state = PlacementState(num_shards)
    for name, size in log:
        state.place(name, size)
    return state
