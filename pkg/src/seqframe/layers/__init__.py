from seqframe.layers.attention import AdditiveAttention
from seqframe.layers.base_layer import (
    BaseLayer,
    DuplicateChildError,
    DuplicateVariableError,
    PostConstructionCreateError,
    Variable,
    weight_init,
)
from seqframe.layers.core import Embedding, FeedForward, Softmax
from seqframe.layers.rnn import RNN, LSTMCell

__all__ = [
    "AdditiveAttention",
    "BaseLayer",
    "DuplicateChildError",
    "DuplicateVariableError",
    "Embedding",
    "FeedForward",
    "LSTMCell",
    "PostConstructionCreateError",
    "RNN",
    "Softmax",
    "Variable",
    "weight_init",
]
