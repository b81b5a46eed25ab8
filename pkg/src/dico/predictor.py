"""Mask-predictor interface and the exact tabular Markov-chain oracle.

The oracle is a fully specified first-order chain over a small vocabulary;
its conditional marginals are computed exactly by a clamped forward-backward
sweep, so it serves as ground truth for every desk-scale check.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .core import (
    MASK,
    InvalidArgument,
    InvalidState,
    PositionPrediction,
    PredictionGrid,
    SequenceState,
)

# Probabilities are floored here before taking logs, so oracle "logits" are
# log-probabilities and the logit margin is the log-ratio of the top two.
PROB_FLOOR = 1e-30

TOPK_CAP = 16

ROW_SUM_TOL = 1e-12


class PredictorError(Exception):
    """A predictor failed to produce a grid."""


class MaskPredictor(ABC):
    """Produces a PredictionGrid for all masked positions in one invocation.

    Implementations must be deterministic (identical state -> identical grid).
    The decode session, not the predictor, increments step_counter.
    """

    @abstractmethod
    def predict(self, state: SequenceState) -> PredictionGrid:
        raise NotImplementedError


def grid_from_probs(
    masked_positions: list[int], probs: np.ndarray, topk: int | None = None
) -> PredictionGrid:
    """Build a grid from a (#masked, V) matrix of exact probabilities.

    Ties at the top resolve to the smallest token id. Logits are floored
    log-probabilities.
    """
    if topk is None:
        topk = TOPK_CAP
    entries = []
    for row_idx, pos in enumerate(masked_positions):
        row = probs[row_idx]
        order = np.argsort(-row, kind="stable")
        top1 = int(order[0])
        p1 = float(row[top1])
        p2 = float(row[order[1]]) if row.shape[0] > 1 else 0.0
        k = min(int(topk), row.shape[0])
        entries.append(
            PositionPrediction(
                position=pos,
                argmax_token=top1,
                top1_prob=p1,
                top1_logit=math.log(max(p1, PROB_FLOOR)),
                top2_logit=math.log(max(p2, PROB_FLOOR)),
                topk=tuple((int(t), float(row[t])) for t in order[:k]),
            )
        )
    return PredictionGrid(entries=tuple(entries))


@dataclass(frozen=True)
class MarkovOracle(MaskPredictor):
    """First-order Markov chain of length L over a vocabulary of size V.

    Prompt tokens are treated as the first m observed chain states, so the
    chain length must equal prompt length + response length of any state it
    predicts for. Immutable and shareable across sessions.
    """

    vocab_size: int
    length: int
    initial: tuple[float, ...]
    transition: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        V = self.vocab_size
        if V < 2:
            raise InvalidArgument(f"vocab_size must be >= 2, got {V}")
        if self.length < 1:
            raise InvalidArgument(f"length must be >= 1, got {self.length}")
        init = np.asarray(self.initial, dtype=float)
        trans = np.asarray(self.transition, dtype=float)
        if init.shape != (V,) or trans.shape != (V, V):
            raise InvalidArgument("initial/transition shapes do not match vocab_size")
        if np.any(init < 0) or np.any(trans < 0):
            raise InvalidArgument("probabilities must be non-negative")
        if abs(init.sum() - 1.0) > ROW_SUM_TOL:
            raise InvalidArgument("initial distribution must sum to 1")
        rows = trans.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ROW_SUM_TOL):
            raise InvalidArgument("transition rows must sum to 1")

    # Cached ndarray views; frozen dataclass, so compute on demand.
    @property
    def initial_arr(self) -> np.ndarray:
        return np.asarray(self.initial, dtype=float)

    @property
    def transition_arr(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)

    def predict(self, state: SequenceState) -> PredictionGrid:
        if not state.masked_positions():
            raise InvalidState("predict requires at least one masked position")
        return exact_conditional_marginals(self, state)

    def to_json(self) -> str:
        return json.dumps(
            {
                "vocab_size": self.vocab_size,
                "length": self.length,
                "initial": list(self.initial),
                "transition": [list(row) for row in self.transition],
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "MarkovOracle":
        try:
            obj = json.loads(text)
            return cls(
                vocab_size=int(obj["vocab_size"]),
                length=int(obj["length"]),
                initial=tuple(float(p) for p in obj["initial"]),
                transition=tuple(
                    tuple(float(p) for p in row) for row in obj["transition"]
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgument(f"malformed oracle JSON: {exc}") from exc


def _chain_evidence(oracle: MarkovOracle, state: SequenceState) -> list[int]:
    """Observed chain value per position (prompt + response), -1 if masked."""
    observed = [int(t) for t in state.prompt]
    for tok in state.response:
        observed.append(-1 if tok == MASK else int(tok))
    for pos, val in enumerate(observed):
        if val >= oracle.vocab_size:
            raise InvalidArgument(f"token {val} at chain position {pos} out of vocabulary")
    return observed


def conditional_prob_rows(
    oracle: MarkovOracle, state: SequenceState
) -> tuple[list[int], np.ndarray]:
    """Exact P(x_i = v | observed slots), one full-vocabulary row per mask.

    Clamped forward-backward over the chain; alpha/beta vectors are rescaled
    each step, which cancels in the per-position normalization. Returns the
    masked positions and a (len(masked), V) row-stochastic array.
    """
    L = state.prompt_len + state.response_len
    if L != oracle.length:
        raise InvalidArgument(
            f"state length {L} does not match oracle length {oracle.length}"
        )
    masked = state.masked_positions()
    if not masked:
        raise InvalidState("no masked positions to predict")

    observed = _chain_evidence(oracle, state)
    V = oracle.vocab_size
    T = oracle.transition_arr

    def clamp(vec: np.ndarray, k: int) -> np.ndarray:
        if observed[k] < 0:
            return vec
        out = np.zeros(V)
        out[observed[k]] = vec[observed[k]]
        return out

    alpha = np.empty((L, V))
    vec = clamp(oracle.initial_arr.copy(), 0)
    alpha[0] = vec / max(vec.sum(), PROB_FLOOR)
    for k in range(1, L):
        vec = clamp(alpha[k - 1] @ T, k)
        alpha[k] = vec / max(vec.sum(), PROB_FLOOR)

    beta = np.empty((L, V))
    beta[L - 1] = 1.0
    for k in range(L - 2, -1, -1):
        vec = T @ clamp(beta[k + 1], k + 1)
        beta[k] = vec / max(vec.sum(), PROB_FLOOR)

    m = state.prompt_len
    probs = np.empty((len(masked), V))
    for row_idx, pos in enumerate(masked):
        k = m + pos
        joint = alpha[k] * beta[k]
        total = joint.sum()
        if total <= 0.0:
            raise PredictorError(
                f"observed tokens have zero probability under the chain (position {pos})"
            )
        probs[row_idx] = joint / total
    return masked, probs


def exact_conditional_marginals(
    oracle: MarkovOracle, state: SequenceState
) -> PredictionGrid:
    """conditional_prob_rows packaged as a PredictionGrid (top-k capped)."""
    masked, probs = conditional_prob_rows(oracle, state)
    return grid_from_probs(masked, probs, topk=min(oracle.vocab_size, TOPK_CAP))


def random_oracle(
    rng_seed: int, vocab_size: int, length: int, concentration: float
) -> MarkovOracle:
    """Sample a reproducible chain: uniform logits scaled by concentration.

    The underlying uniform logits depend only on (rng_seed, vocab_size), so
    sweeping concentration on a fixed seed sharpens the same chain in place.
    """
    if vocab_size < 2:
        raise InvalidArgument(f"vocab_size must be >= 2, got {vocab_size}")
    if length < 2:
        raise InvalidArgument(f"length must be >= 2, got {length}")
    if concentration <= 0:
        raise InvalidArgument(f"concentration must be > 0, got {concentration}")
    rng = np.random.default_rng(rng_seed)
    logits = rng.uniform(size=(vocab_size + 1, vocab_size))
    scaled = concentration * logits
    scaled -= scaled.max(axis=1, keepdims=True)
    probs = np.exp(scaled)
    probs /= probs.sum(axis=1, keepdims=True)
    return MarkovOracle(
        vocab_size=vocab_size,
        length=length,
        initial=tuple(float(p) for p in probs[0]),
        transition=tuple(tuple(float(p) for p in row) for row in probs[1:]),
    )
