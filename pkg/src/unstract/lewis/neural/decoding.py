"""Sampling and beam search over a Seq2SeqNet under a pluggable constraint.

A constraint is a small state machine: ``initial()`` gives the start state,
``allowed(state, step)`` the token ids that may come next, and
``advance(state, token)`` the next state plus whether decoding finished.
"""

from dataclasses import dataclass
from typing import Any, Optional, Protocol

import numpy as np

from unstract.lewis.neural.model import Seq2SeqNet


class Constraint(Protocol):
    def initial(self) -> Any: ...

    def allowed(self, state: Any, step: int) -> np.ndarray: ...

    def advance(self, state: Any, token: int) -> tuple[Any, bool]: ...


@dataclass
class Hypothesis:
    ids: list[int]
    score: float
    state: Any
    finished: bool = False


class FreeConstraint:
    """Any token from ``vocab_ids``; stops on ``eos_id``."""

    def __init__(self, vocab_ids: np.ndarray, eos_id: int):
        self.vocab_ids = np.asarray(vocab_ids, dtype=np.int64)
        self.eos_id = eos_id

    def initial(self):
        return None

    def allowed(self, state, step: int) -> np.ndarray:
        return self.vocab_ids

    def advance(self, state, token: int):
        return None, token == self.eos_id


def _encode(net: Seq2SeqNet, src_ids: list[int]):
    ids = np.asarray([src_ids], dtype=np.int64)
    mask = np.ones_like(ids, dtype=bool)
    return net.encode_source(ids, mask), mask


def sample(
    net: Seq2SeqNet,
    src_ids: list[int],
    bos_id: int,
    constraint: Constraint,
    max_steps: int,
    rng: Optional[np.random.Generator] = None,
    temperature: float = 1.0,
) -> Hypothesis:
    """Ancestral sampling (greedy when ``temperature`` is 0 or no rng)."""
    memory, memory_mask = _encode(net, src_ids)
    hyp = Hypothesis([bos_id], 0.0, constraint.initial())
    for step in range(max_steps):
        allowed = constraint.allowed(hyp.state, step)
        if allowed.size == 0:
            break
        logp = net.next_log_probs(memory, memory_mask, np.asarray([hyp.ids], dtype=np.int64))[0]
        scores = logp[allowed]
        if rng is None or temperature <= 0.0:
            choice = int(np.argmax(scores))
        else:
            scaled = (scores - scores.max()) / temperature
            probs = np.exp(scaled)
            choice = int(rng.choice(allowed.size, p=probs / probs.sum()))
        token = int(allowed[choice])
        state, done = constraint.advance(hyp.state, token)
        hyp = Hypothesis(hyp.ids + [token], hyp.score + float(logp[token]), state, done)
        if done:
            break
    return hyp


def beam_search(
    net: Seq2SeqNet,
    src_ids: list[int],
    bos_id: int,
    constraint: Constraint,
    max_steps: int,
    beam: int = 5,
) -> list[Hypothesis]:
    """Returns up to ``beam`` hypotheses, finished ones first, each group
    sorted by total log-probability (descending)."""
    memory, memory_mask = _encode(net, src_ids)
    live = [Hypothesis([bos_id], 0.0, constraint.initial())]
    finished: list[Hypothesis] = []
    for step in range(max_steps):
        if not live or len(finished) >= beam:
            break
        logp = net.next_log_probs(memory, memory_mask, np.asarray([h.ids for h in live], dtype=np.int64))
        expansions = []
        for row, hyp in enumerate(live):
            allowed = constraint.allowed(hyp.state, step)
            scores = logp[row, allowed]
            for k in np.argsort(-scores, kind="stable")[:beam]:
                expansions.append((hyp.score + float(scores[k]), row, int(allowed[k])))
        expansions.sort(key=lambda e: (-e[0], e[1], e[2]))
        next_live = []
        for score, row, token in expansions[: beam - len(finished)]:
            state, done = constraint.advance(live[row].state, token)
            hyp = Hypothesis(live[row].ids + [token], score, state, done)
            (finished if done else next_live).append(hyp)
        live = next_live
    finished.sort(key=lambda h: -h.score)
    live.sort(key=lambda h: -h.score)
    return (finished + live)[:beam]
