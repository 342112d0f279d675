"""A small sequence-model training framework on numpy."""

from seqframe.hyperparams import Params
from seqframe.nested_map import NestedMap

__version__ = "0.1.0"

__all__ = ["NestedMap", "Params", "__version__"]
