"""Additive attention over a padded source sequence."""

from __future__ import annotations

import numpy as np

from seqframe import tensor as tn
from seqframe.layers.base_layer import BaseLayer
from seqframe.nested_map import NestedMap
from seqframe.tensor import Tensor

_MASK_VALUE = -1e9


class AdditiveAttention(BaseLayer):
    """``score = v . tanh(W_q q + W_k k)`` with masked softmax over sources."""

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("source_dim", 0, "Depth of source vectors.")
        p.define("query_dim", 0, "Depth of query vectors.")
        p.define("hidden_dim", 0, "Depth of the additive scoring space.")
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        self.create_variable("source_proj", (p.source_dim, p.hidden_dim))
        self.create_variable("query_proj", (p.query_dim, p.hidden_dim))
        self.create_variable("v", (p.hidden_dim, 1))

    def pack_source(self, theta, source: Tensor, paddings) -> NestedMap:
        """Projects the source once so decode steps only project the query."""
        b, s, d = source.shape
        keys = tn.matmul(tn.reshape(source, (b * s, d)), theta.source_proj)
        return NestedMap(
            proj=tn.reshape(keys, (b, s, self.params.hidden_dim)),
            vecs=source,
            paddings=np.asarray(paddings),
        )

    def compute_context(self, theta, packed: NestedMap, query: Tensor):
        """Returns ``(context [B, source_dim], probs [B, S])``."""
        b, s, a = packed.proj.shape
        q = tn.matmul(query, theta.query_proj)
        q = tn.broadcast_to(tn.expand_dims(q, 1), (b, s, a))
        hidden = tn.tanh(packed.proj + q)
        scores = tn.reshape(tn.matmul(tn.reshape(hidden, (b * s, a)), theta.v), (b, s))
        pad = packed.paddings > 0
        if pad.any():
            scores = tn.where(pad, Tensor(np.full((b, s), _MASK_VALUE, scores.dtype)), scores)
        probs = tn.softmax(scores, axis=1)
        context = tn.batch_matmul(tn.expand_dims(probs, 1), packed.vecs)
        return tn.reshape(context, (b, packed.vecs.shape[2])), probs

    def fprop(self, theta, source: Tensor, paddings, query: Tensor):
        return self.compute_context(theta, self.pack_source(theta, source, paddings), query)
