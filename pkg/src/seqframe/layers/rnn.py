"""LSTM cell and a padding-aware RNN that unrolls a cell over time."""

from __future__ import annotations

import numpy as np

from seqframe import tensor as tn
from seqframe.layers.base_layer import BaseLayer, weight_init
from seqframe.nested_map import NestedMap
from seqframe.tensor import Tensor


class LSTMCell(BaseLayer):
    """Standard LSTM: input, forget, output gates and a tanh candidate.

    State is ``NestedMap(m=[B, H], c=[B, H])``. The forget-gate bias starts at
    1.0.
    """

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("num_input_nodes", 0, "Input depth.")
        p.define("num_output_nodes", 0, "Hidden / cell depth.")
        p.define("forget_gate_bias", 1.0, "Initial value of the forget-gate bias.")
        return p

    def __init__(self, params):
        super().__init__(params)
        p = self.params
        h = p.num_output_nodes
        self.create_variable("wm", (p.num_input_nodes + h, 4 * h))
        self.create_variable("b", (4 * h,), init=weight_init("constant", 0.0))
        # Gate layout along the last axis: [i, f, o, g].
        self._vars["b"].value[h : 2 * h] = p.forget_gate_bias

    @property
    def hidden_dim(self) -> int:
        return self.params.num_output_nodes

    def zero_state(self, batch_size: int) -> NestedMap:
        z = np.zeros((batch_size, self.hidden_dim), self.dtype)
        return NestedMap(m=Tensor(z), c=Tensor(z.copy()))

    def fprop(self, theta, state: NestedMap, x: Tensor) -> NestedMap:
        h = self.hidden_dim
        xm = tn.concat([x, state.m], axis=1)
        gates = tn.matmul(xm, theta.wm)
        gates = gates + tn.broadcast_to(theta.b, gates.shape)
        i = tn.sigmoid(tn.slice(gates, 1, 0, h))
        f = tn.sigmoid(tn.slice(gates, 1, h, h))
        o = tn.sigmoid(tn.slice(gates, 1, 2 * h, h))
        g = tn.tanh(tn.slice(gates, 1, 3 * h, h))
        c = f * state.c + i * g
        m = o * tn.tanh(c)
        return NestedMap(m=m, c=c)


class RNN(BaseLayer):
    """Runs a cell over ``[B, T, D]`` inputs.

    Where ``paddings[b, t] == 1`` the state of row ``b`` is carried through
    unchanged, so trailing padding never affects the final state.
    """

    @classmethod
    def Params(cls):
        p = super().Params()
        p.define("cell", LSTMCell.Params(), "Cell params.")
        return p

    def __init__(self, params):
        super().__init__(params)
        self.create_child("cell", self.params.cell)

    def fprop(self, theta, inputs: Tensor, paddings, state0: NestedMap | None = None) -> NestedMap:
        """Returns ``NestedMap(outputs=[B, T, H], final_state=...)``."""
        b, t = inputs.shape[0], inputs.shape[1]
        paddings = np.asarray(paddings)
        tn.assert_shape(paddings, (b, t), self.path)
        tn.assert_in_set(paddings, {0, 1}, self.path)
        state = state0 if state0 is not None else self.cell.zero_state(b)
        outputs = []
        for step in range(t):
            x = tn.take(inputs, step, axis=1)
            new = self.cell.fprop(theta.cell, state, x)
            pad = paddings[:, step : step + 1] > 0
            if pad.any():
                new = NestedMap({k: tn.where(pad, state[k], new[k]) for k in new})
            state = new
            outputs.append(state.m)
        return NestedMap(outputs=tn.stack(outputs, axis=1), final_state=state)
