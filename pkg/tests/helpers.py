"""Shared fixtures: stub predictors and independent brute-force oracles.

The brute-force routines here deliberately avoid the library's own
algorithms (transfer matrices, clamped forward-backward, greedy prefix
scans) so that agreement between the two is evidence, not tautology.
"""

from __future__ import annotations

import itertools
import math

from dico.core import MASK, PositionPrediction, PredictionGrid, SequenceState


# --- stub predictors --------------------------------------------------------


def make_grid(spec: dict[int, tuple[int, float]],
              margins: dict[int, float] | None = None) -> PredictionGrid:
    """Grid from {position: (argmax_token, top1_prob)}.

    Logits default to log-probabilities of a two-token split, so the margin
    is controllable per position via `margins` when a test needs it.
    """
    margins = margins or {}
    entries = []
    for pos in sorted(spec):
        token, prob = spec[pos]
        top1_logit = math.log(max(prob, 1e-30))
        # default margin: log-odds against the complement, floored at a tie
        # (a sub-0.5 top-1 cannot beat its own complement)
        margin = margins.get(
            pos, max(0.0, top1_logit - math.log(max(1.0 - prob, 1e-30)))
        )
        entries.append(
            PositionPrediction(
                position=pos,
                argmax_token=token,
                top1_prob=prob,
                top1_logit=top1_logit,
                top2_logit=top1_logit - margin,
                topk=((token, prob),),
            )
        )
    return PredictionGrid(entries=tuple(entries))


class StubPredictor:
    """Replays a scripted sequence of grids, one per predict call.

    The script may be a single dict (reused every call, filtered to the
    currently masked positions) or a list of dicts consumed in order.
    """

    def __init__(self, script, margins=None):
        self.script = script
        self.margins = margins
        self.calls = 0

    def predict(self, state: SequenceState) -> PredictionGrid:
        if isinstance(self.script, dict):
            spec = self.script
        else:
            spec = self.script[min(self.calls, len(self.script) - 1)]
        self.calls += 1
        live = {p: spec[p] for p in state.masked_positions()}
        margins = None
        if self.margins is not None:
            margins = {p: self.margins[p] for p in live if p in self.margins}
        return make_grid(live, margins)


# --- brute-force chain marginals -------------------------------------------


def chain_prob(initial, transition, seq) -> float:
    p = initial[seq[0]]
    for a, b in zip(seq, seq[1:]):
        p *= transition[a][b]
    return p


def brute_marginals(oracle, prompt, response) -> dict[int, list[float]]:
    """Exact conditionals by summing over every completion of the masks.

    Returns {response_position: [P(token | evidence) for each token]}.
    """
    V = oracle.vocab_size
    masked = [i for i, t in enumerate(response) if t == MASK]
    mass = {p: [0.0] * V for p in masked}
    total = 0.0
    for combo in itertools.product(range(V), repeat=len(masked)):
        seq = list(prompt) + list(response)
        for p, t in zip(masked, combo):
            seq[len(prompt) + p] = t
        pr = chain_prob(oracle.initial, oracle.transition, seq)
        total += pr
        for p, t in zip(masked, combo):
            mass[p][t] += pr
    return {p: [m / total for m in mass[p]] for p in masked}


# --- brute-force maximal parallel set --------------------------------------


def brute_parallel_set(pairs: list[tuple[int, float]]) -> list[int]:
    """Exhaustive search for the admissible subset of maximum size.

    Among maximum-size subsets the canonical winner takes the largest total
    confidence, then the lexicographically smallest position tuple, which
    is what picking top confidences with ties to smaller positions yields.
    """
    for size in range(len(pairs), 0, -1):
        best = None
        for combo in itertools.combinations(pairs, size):
            if all((size + 1) * (1.0 - c) < 1.0 for _, c in combo):
                key = (sum(c for _, c in combo),
                       tuple(sorted(-p for p, _ in combo)))
                if best is None or key > best[0]:
                    best = (key, sorted(p for p, _ in combo))
        if best is not None:
            return best[1]
    return []


# --- trace inspection -------------------------------------------------------


def phase_sequence(events) -> list[str]:
    return [e.phase for e in events if e.kind == "phase_transition"]


def matches_dico_grammar(phases: list[str]) -> bool:
    """divide (conquer divide)* conquer? finalize"""
    if len(phases) < 2 or phases[0] != "divide" or phases[-1] != "finalize":
        return False
    expected = "conquer"
    for phase in phases[1:-1]:
        if phase != expected:
            return False
        expected = "divide" if expected == "conquer" else "conquer"
    return True


def unmasked_positions_in_order(events) -> list[int]:
    out = []
    for ev in events:
        if ev.kind == "unmask":
            out.extend(ev.positions)
    return out


def violates_block_order(events, response_length: int, block_size: int) -> bool:
    """True if any unmask event touches a position outside the active block.

    The active block is the leftmost one still holding a mask; strictly
    left-to-right block decoding never reaches past it.
    """
    unmasked: set[int] = set()
    for ev in events:
        if ev.kind != "unmask":
            continue
        lo = 0
        while lo < response_length and all(
            p in unmasked
            for p in range(lo, min(lo + block_size, response_length))
        ):
            lo += block_size
        hi = min(lo + block_size, response_length)
        for pos in ev.positions:
            if not lo <= pos < hi:
                return True
            unmasked.add(pos)
    return False
