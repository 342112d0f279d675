"""Independent reference implementations used by several test modules."""

import itertools

import numpy as np


def simulate(lengths, bounds, limits):
    """Independent oracle: per-bucket FIFO queues, emitted in completion order."""
    queues = {b: [] for b in bounds}
    out, dropped = [], 0
    for uid, n in enumerate(lengths):
        fits = [b for b in bounds if n <= b]
        if not fits:
            dropped += 1
            continue
        b = fits[0]
        queues[b].append(uid)
        if len(queues[b]) == limits[bounds.index(b)]:
            out.append((b, queues[b]))
            queues[b] = []
    out += [(b, q) for b, q in queues.items() if q]
    return out, dropped


def brute_force_placement(num_shards, sizes):
    """Recomputes greedy placement from scratch for every prefix."""
    out = []
    for k in range(len(sizes)):
        loads = [sum(s for s, a in zip(sizes[:k], out) if a == i) for i in range(num_shards)]
        best = min(loads)
        out.append(loads.index(best))
    return out


BOS = -1  # never produced; only fed as the first prev_id


class TableModel:
    """Logits depend on the whole prefix; drawn once per prefix from a seed."""

    def __init__(self, vocab, seed, scale=3.0):
        self.vocab = vocab
        self.seed = seed
        self.scale = scale
        self.table = {}

    def logits(self, prefix):
        if prefix not in self.table:
            rng = np.random.default_rng([self.seed, len(prefix), *[t + 1 for t in prefix]])
            self.table[prefix] = rng.normal(0, self.scale, self.vocab)
        return self.table[prefix]

    def decode_fn(self, state, prev_id):
        prefix = state if prev_id == BOS else state + (prev_id,)
        return self.logits(prefix), prefix


def log_softmax(z):
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def exhaustive(model, eos, max_len):
    """Best sequence ending in eos within max_len tokens (or best full-length one)."""
    best, best_partial = (None, -np.inf), (None, -np.inf)
    for n in range(1, max_len + 1):
        for seq in itertools.product(range(model.vocab), repeat=n):
            if eos in seq[:-1]:
                continue
            score = sum(log_softmax(model.logits(seq[:i]))[seq[i]] for i in range(n))
            if seq[-1] == eos:
                if score > best[1]:
                    best = (list(seq), score)
            elif n == max_len and score > best_partial[1]:
                best_partial = (list(seq), score)
    return best if best[0] is not None else best_partial


