"""Length-bounded beam search over a step function."""

from __future__ import annotations

from typing import Any, Callable

import numpy as np


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def beam_search(
    decode_fn: Callable[[Any, int], tuple[np.ndarray, Any]],
    init_state: Any,
    bos: int,
    eos: int,
    beam: int,
    max_len: int,
) -> tuple[list[int], float]:
    """Returns ``(ids, log_prob)`` of the best hypothesis.

    ``decode_fn(state, prev_id) -> (logits over the vocab, next_state)``.
    Every step keeps the ``beam`` best expansions across all live hypotheses;
    expansions ending in ``eos`` leave the beam as finished hypotheses. The
    answer is the best finished hypothesis (ids include the final ``eos``), or
    the best live one if none finished within ``max_len`` tokens. With
    ``beam=1`` this is greedy argmax decoding.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    live = [([], 0.0, init_state, bos)]
    finished: list[tuple[list[int], float]] = []
    for _ in range(max_len):
        candidates = []
        for h, (ids, score, state, prev) in enumerate(live):
            logits, next_state = decode_fn(state, prev)
            logp = _log_softmax(logits)
            for tok in range(logp.shape[0]):
                candidates.append((score + float(logp[tok]), h, tok, next_state))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        new_live = []
        for score, h, tok, next_state in candidates[:beam]:
            ids = live[h][0] + [tok]
            if tok == eos:
                finished.append((ids, score))
            else:
                new_live.append((ids, score, next_state, tok))
        live = new_live
        if not live:
            break
        best_done = max((s for _, s in finished), default=-np.inf)
        # Log-probs only fall, so no live hypothesis can overtake this.
        if best_done >= live[0][1]:
            break
    if finished:
        ids, score = max(finished, key=lambda f: f[1])
        return ids, score
    ids, score = live[0][0], live[0][1]
    return ids, score


def greedy_search(decode_fn, init_state, bos: int, eos: int, max_len: int) -> tuple[list[int], float]:
    """Argmax rollout, stopping after ``eos``."""
    ids, total, state, prev = [], 0.0, init_state, bos
    for _ in range(max_len):
        logits, state = decode_fn(state, prev)
        logp = _log_softmax(logits)
        prev = int(np.argmax(logp))
        total += float(logp[prev])
        ids.append(prev)
        if prev == eos:
            break
    return ids, total
