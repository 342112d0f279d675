"""Backward-vs-finite-difference comparison shared by the gradient tests."""

import numpy as np

from seqframe import tensor as tn
from seqframe.hyperparams import instantiate
from seqframe.layers import RNN, AdditiveAttention, Embedding, FeedForward, LSTMCell, Softmax
from seqframe.nested_map import NestedMap
from seqframe.tensor import Tensor


def max_grad_error(fn, at: NestedMap, step: float = 1e-5) -> float:
    """Largest relative error between tape gradients and central differences.

    ``fn`` maps a NestedMap of Tensors to a rank-0 Tensor; ``at`` holds float64
    arrays.
    """
    _, grads = tn.value_and_grad(fn, at)
    numeric = tn.finite_difference_grad(fn, at, step)
    worst = 0.0
    for g, n in zip(grads.flatten(), numeric.flatten()):
        if g.value.size:
            worst = max(worst, float(tn.relative_error(g, n).max()))
    return worst


def random_weights(layer, rng) -> NestedMap:
    """Fresh float64 values shaped like ``layer.vars``."""
    return layer.vars.transform(lambda v: rng.normal(0.0, 0.5, v.shape))


def projection(rng, shape) -> np.ndarray:
    """Fixed random direction to reduce a tensor output to a scalar loss."""
    return rng.normal(size=shape)


def layer_case(name, rng):
    """Returns (layer, loss_fn(theta)) for one random instance."""
    if name == "FeedForward":
        act = rng.choice(["tanh", "sigmoid", "none"])
        layer = instantiate(FeedForward.Params().set(name="ff", dtype="float64", input_dim=3, output_dim=2, activation=str(act)))
        x, proj = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        return layer, lambda th: tn.reduce_sum(layer.fprop(th, Tensor(x)) * Tensor(proj))
    if name == "Embedding":
        layer = instantiate(Embedding.Params().set(name="emb", dtype="float64", vocab_size=5, embedding_dim=3))
        ids = rng.integers(0, 5, size=(2, 3))
        proj = rng.normal(size=(2, 3, 3))
        return layer, lambda th: tn.reduce_sum(layer.fprop(th, ids) * Tensor(proj))
    if name == "Softmax":
        layer = instantiate(Softmax.Params().set(name="sm", dtype="float64", input_dim=3, num_classes=4))
        x = rng.normal(size=(5, 3))
        labels, w = rng.integers(0, 4, size=5), rng.uniform(size=5)
        return layer, lambda th: layer.xent_loss(th, Tensor(x), labels, w)[0]
    if name == "LSTMCell":
        layer = instantiate(LSTMCell.Params().set(name="cell", dtype="float64", num_input_nodes=3, num_output_nodes=2))
        x = rng.normal(size=(2, 3))
        s = NestedMap(m=Tensor(rng.normal(size=(2, 2))), c=Tensor(rng.normal(size=(2, 2))))
        pm, pc = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))

        def f(th):
            out = layer.fprop(th, s, Tensor(x))
            return tn.reduce_sum(out.m * Tensor(pm)) + tn.reduce_sum(out.c * Tensor(pc))

        return layer, f
    if name == "RNN":
        p = RNN.Params().set(name="rnn", dtype="float64")
        p.cell.set(num_input_nodes=2, num_output_nodes=2)
        layer = instantiate(p)
        x = rng.normal(size=(2, 3, 2))
        pad = np.array([[0, 0, 0], [0, 0, 1]])
        proj = rng.normal(size=(2, 3, 2))
        return layer, lambda th: tn.reduce_sum(layer.fprop(th, Tensor(x), pad).outputs * Tensor(proj))
    if name == "AdditiveAttention":
        layer = instantiate(AdditiveAttention.Params().set(name="att", dtype="float64", source_dim=3, query_dim=2, hidden_dim=3))
        src, q = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 2))
        pad = np.array([[0, 0, 0, 1], [0, 0, 0, 0]])
        proj = rng.normal(size=(2, 3))
        return layer, lambda th: tn.reduce_sum(layer.fprop(th, Tensor(src), pad, Tensor(q))[0] * Tensor(proj))
    raise KeyError(name)


LAYERS = ["FeedForward", "Embedding", "Softmax", "LSTMCell", "RNN", "AdditiveAttention"]
