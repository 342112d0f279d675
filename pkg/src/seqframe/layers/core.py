"""Feed-forward, embedding, and softmax layers."""

from __future__ import annotations

import numpy as np

from seqframe import tensor as tn
from seqframe.layers.base_layer import BaseLayer, weight_init
from seqframe.tensor import Tensor

ACTIVATIONS = {
    "none": lambda x: x,
    "relu": tn.relu,
    "tanh": tn.tanh,
    "sigmoid": tn.sigmoid,
}


class FeedForward(BaseLayer):
    """``act(x @ w + b)`` on ``[N, input_dim]`` inputs."""

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("input_dim", 0, "Input depth.")
        p.define("output_dim", 0, "Output depth.")
        p.define("activation", "relu", "One of none, relu, tanh, sigmoid.")
        p.define("has_bias", True, "Adds a bias vector.")
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        if p.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {p.activation!r}")
        self.create_variable("w", (p.input_dim, p.output_dim))
        if p.has_bias:
            self.create_variable("b", (p.output_dim,), init=weight_init("constant", 0.0))

    def fprop(self, theta, x: Tensor) -> Tensor:
        p = self.params
        tn.assert_shape(x, (-1, p.input_dim), self.path)
        y = tn.matmul(x, theta.w)
        if p.has_bias:
            y = y + tn.broadcast_to(theta.b, y.shape)
        return ACTIVATIONS[p.activation](y)


class Embedding(BaseLayer):
    """Table lookup: integer ids of any shape -> ``ids.shape + [dim]``."""

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("vocab_size", 0, "Number of rows.")
        p.define("embedding_dim", 0, "Row width.")
        p.params_init = weight_init("gaussian", 1.0)
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        self.create_variable("emb", (p.vocab_size, p.embedding_dim))

    def fprop(self, theta, ids) -> Tensor:
        return tn.gather(theta.emb, np.asarray(ids))


class Softmax(BaseLayer):
    """Linear projection to class logits plus weighted cross entropy."""

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("input_dim", 0, "Input depth.")
        p.define("num_classes", 0, "Number of output classes.")
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        self.create_variable("w", (p.input_dim, p.num_classes))
        self.create_variable("b", (p.num_classes,), init=weight_init("constant", 0.0))

    def fprop(self, theta, x: Tensor) -> Tensor:
        """Logits ``[N, num_classes]``."""
        y = tn.matmul(x, theta.w)
        return y + tn.broadcast_to(theta.b, y.shape)

    def xent_loss(self, theta, x: Tensor, labels, weights):
        """Returns ``(sum of weighted nll, sum of weights, logits)``."""
        logits = self.fprop(theta, x)
        total, weight = tn.cross_entropy(logits, labels, weights)
        return total, weight, logits
