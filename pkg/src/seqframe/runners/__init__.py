"""Checkpoints, placement, variable hosts, and runner jobs."""

from seqframe.runners.beam_search import beam_search, greedy_search
from seqframe.runners.checkpoint import (
    Checkpoint,
    CorruptCheckpointError,
    latest_checkpoint,
    read_index,
    restore_checkpoint,
    save_checkpoint,
)
from seqframe.runners.cluster import ClusterSpec, PlacementState, place_variable

__all__ = [
    "Checkpoint",
    "ClusterSpec",
    "CorruptCheckpointError",
    "PlacementState",
    "beam_search",
    "greedy_search",
    "latest_checkpoint",
    "place_variable",
    "read_index",
    "restore_checkpoint",
    "save_checkpoint",
]
