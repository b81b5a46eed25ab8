"""Core state, configuration, and trace types shared by every decoding phase.

Positions are response-relative everywhere: position 0 is the first response
slot. The prompt is carried along only so predictors can condition on it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

# Sentinel for a masked response slot. Deliberately outside any token-id
# range; predictors map it to their own mask representation.
MASK = -1

NON_AR = "non-ar"
SEMI_AR = "semi-ar"

PHASES = ("divide", "conquer", "finalize", "baseline")
EVENT_KINDS = (
    "forward",
    "seed_accept",
    "unmask",
    "cluster_form",
    "cluster_merge",
    "cluster_adapt",
    "cluster_deactivate",
    "phase_transition",
    "fallback",
)


class DecodeError(Exception):
    """Base class for controller errors."""


class InvalidArgument(DecodeError):
    pass


class InvalidState(DecodeError):
    pass


class IntegrityError(DecodeError):
    """A trace or result failed a consistency check."""


@dataclass(frozen=True)
class SequenceState:
    """Partially decoded sequence: immutable prompt plus response slots.

    Response slots hold either a token id or MASK. Slots only ever move
    MASK -> token (monotone unmasking); step_counter counts predictor
    invocations, the hardware-free throughput unit.
    """

    prompt: tuple[int, ...]
    response: tuple[int, ...]
    step_counter: int = 0

    @property
    def prompt_len(self) -> int:
        return len(self.prompt)

    @property
    def response_len(self) -> int:
        return len(self.response)

    def masked_positions(self) -> list[int]:
        return [i for i, tok in enumerate(self.response) if tok == MASK]

    def unmasked_count(self) -> int:
        return sum(1 for tok in self.response if tok != MASK)

    def is_masked(self, pos: int) -> bool:
        return self.response[pos] == MASK

    def fully_decoded(self) -> bool:
        return MASK not in self.response

    def bump_step(self) -> "SequenceState":
        return replace(self, step_counter=self.step_counter + 1)


def new_sequence(prompt: Sequence[int], response_length: int) -> SequenceState:
    """Build the initial fully masked state for a decode session."""
    if response_length < 1:
        raise InvalidArgument(f"response_length must be >= 1, got {response_length}")
    if any(tok < 0 for tok in prompt):
        raise InvalidArgument("prompt tokens must be non-negative token ids")
    return SequenceState(
        prompt=tuple(int(t) for t in prompt),
        response=(MASK,) * response_length,
        step_counter=0,
    )


def unmask_ratio(state: SequenceState) -> float:
    """Fraction of response slots already decoded (prompt excluded)."""
    return state.unmasked_count() / state.response_len


@dataclass(frozen=True)
class PositionPrediction:
    """Per-position prediction summary from one forward pass."""

    position: int
    argmax_token: int
    top1_prob: float
    top1_logit: float
    top2_logit: float
    topk: tuple[tuple[int, float], ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.top1_prob <= 1.0:
            raise InvalidArgument(f"top1_prob out of [0,1]: {self.top1_prob}")
        if self.top1_logit < self.top2_logit:
            raise InvalidArgument(
                f"top1_logit {self.top1_logit} < top2_logit {self.top2_logit}"
            )


@dataclass(frozen=True)
class PredictionGrid:
    """Predictions for every masked position of the state they came from."""

    entries: tuple[PositionPrediction, ...]

    def __post_init__(self):
        positions = [e.position for e in self.entries]
        if positions != sorted(set(positions)):
            raise InvalidArgument("grid positions must be strictly increasing")

    def positions(self) -> list[int]:
        return [e.position for e in self.entries]

    def by_position(self) -> dict[int, PositionPrediction]:
        return {e.position: e for e in self.entries}

    def confidence(self, pos: int) -> float:
        return self.by_position()[pos].top1_prob


@dataclass(frozen=True)
class DecodeConfig:
    """All decoding hyperparameters.

    Defaults: alpha=0.5, beta=0.05, tau1=0.3, tau2=0.6, tau3=3, r_gate=0.8,
    t_max=3, n_seeds=8 for non-AR / 4 for semi-AR, block_size=128.
    trajectory_guidance=False forces the trajectory weight to 1 everywhere;
    fixed_parallel_threshold replaces the adaptive parallel rule with plain
    thresholding inside Conquer (ablation toggles).
    """

    alpha: float = 0.5
    beta: float = 0.05
    tau1: float = 0.3
    tau2: float = 0.6
    tau3: float = 3.0
    n_seeds: int | None = None
    t_max: int = 3
    r_gate: float = 0.8
    mode: str = NON_AR
    block_size: int = 128
    rng_seed: int = 0
    trajectory_guidance: bool = True
    fixed_parallel_threshold: float | None = None

    def __post_init__(self):
        if self.mode not in (NON_AR, SEMI_AR):
            raise InvalidArgument(f"unknown mode {self.mode!r}")
        if self.n_seeds is None:
            object.__setattr__(self, "n_seeds", 8 if self.mode == NON_AR else 4)
        if not 0.0 <= self.tau1 <= self.tau2 <= 1.0:
            raise InvalidArgument(
                f"need 0 <= tau1 <= tau2 <= 1, got tau1={self.tau1} tau2={self.tau2}"
            )
        if not 0.0 < self.r_gate <= 1.0:
            raise InvalidArgument(f"r_gate must be in (0,1], got {self.r_gate}")
        if self.n_seeds < 1:
            raise InvalidArgument(f"n_seeds must be >= 1, got {self.n_seeds}")
        if self.t_max < 1:
            raise InvalidArgument(f"t_max must be >= 1, got {self.t_max}")
        if self.block_size < 1:
            raise InvalidArgument(f"block_size must be >= 1, got {self.block_size}")
        if self.fixed_parallel_threshold is not None and not (
            0.0 < self.fixed_parallel_threshold <= 1.0
        ):
            raise InvalidArgument(
                f"fixed_parallel_threshold must be in (0,1], got {self.fixed_parallel_threshold}"
            )


# --- trace ------------------------------------------------------------------

TRACE_FIELDS = (
    "step",
    "phase",
    "kind",
    "positions",
    "tokens",
    "confidences",
    "clusters",
    "unmask_ratio",
)


@dataclass(frozen=True)
class TraceEvent:
    """One decoding event; a trace is a list of these, serialized as JSONL."""

    step: int
    phase: str
    kind: str
    positions: tuple[int, ...] = ()
    tokens: tuple[int, ...] = ()
    confidences: tuple[float, ...] = ()
    clusters: tuple[tuple[int, int], ...] = ()
    unmask_ratio: float = 0.0

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "phase": self.phase,
            "kind": self.kind,
            "positions": list(self.positions),
            "tokens": list(self.tokens),
            "confidences": list(self.confidences),
            "clusters": [[lo, hi] for lo, hi in self.clusters],
            "unmask_ratio": self.unmask_ratio,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TraceEvent":
        try:
            return cls(
                step=int(obj["step"]),
                phase=str(obj["phase"]),
                kind=str(obj["kind"]),
                positions=tuple(int(p) for p in obj["positions"]),
                tokens=tuple(int(t) for t in obj["tokens"]),
                confidences=tuple(float(c) for c in obj["confidences"]),
                clusters=tuple((int(lo), int(hi)) for lo, hi in obj["clusters"]),
                unmask_ratio=float(obj["unmask_ratio"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"malformed trace event: {exc}") from exc


class Trace:
    """Ordered event collector for one decode session."""

    def __init__(self):
        self.events: list[TraceEvent] = []

    def emit(self, event: TraceEvent) -> None:
        if self.events and event.step < self.events[-1].step:
            raise IntegrityError(
                f"trace steps must be non-decreasing: {event.step} after {self.events[-1].step}"
            )
        self.events.append(event)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


def dumps_json(obj) -> str:
    """Canonical JSON encoding used for every machine-readable output."""
    return json.dumps(obj, separators=(",", ":"), allow_nan=True)


def trace_to_jsonl(events: Iterable[TraceEvent]) -> str:
    return "".join(dumps_json(e.to_dict()) + "\n" for e in events)


def trace_from_jsonl(text: str) -> list[TraceEvent]:
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"trace line {lineno} is not valid JSON") from exc
        events.append(TraceEvent.from_dict(obj))
    return events


# --- transition -------------------------------------------------------------


def forward_pass(
    state: SequenceState,
    predictor,
    trace: Trace | None = None,
    phase: str = "baseline",
):
    """One predictor invocation for a session.

    Bumps the step counter and emits a forward event carrying the masked
    positions and their top-1 confidences. Returns (state, grid).
    """
    grid = predictor.predict(state)
    state = state.bump_step()
    if trace is not None:
        trace.emit(
            TraceEvent(
                step=state.step_counter,
                phase=phase,
                kind="forward",
                positions=tuple(grid.positions()),
                confidences=tuple(e.top1_prob for e in grid.entries),
                unmask_ratio=unmask_ratio(state),
            )
        )
    return state, grid


def apply_transition(
    state: SequenceState,
    grid: PredictionGrid,
    selected: Iterable[int],
    trace: Trace | None = None,
    phase: str = "baseline",
) -> SequenceState:
    """Unmask the selected positions with their grid argmax tokens.

    Emits one unmask TraceEvent when a trace is supplied, even for an empty
    selection; all other slots are untouched.
    """
    sel = sorted(set(int(p) for p in selected))
    by_pos = grid.by_position()
    response = list(state.response)
    for pos in sel:
        if pos < 0 or pos >= len(response):
            raise InvalidArgument(f"position {pos} out of range")
        if response[pos] != MASK:
            raise InvalidArgument(f"position {pos} is already unmasked")
        if pos not in by_pos:
            raise InvalidArgument(f"position {pos} missing from prediction grid")
        response[pos] = by_pos[pos].argmax_token
    new_state = replace(state, response=tuple(response))
    if trace is not None:
        trace.emit(
            TraceEvent(
                step=state.step_counter,
                phase=phase,
                kind="unmask",
                positions=tuple(sel),
                tokens=tuple(by_pos[p].argmax_token for p in sel),
                confidences=tuple(by_pos[p].top1_prob for p in sel),
                unmask_ratio=unmask_ratio(new_state),
            )
        )
    return new_state


def replay_trace(
    initial: SequenceState, events: Iterable[TraceEvent]
) -> SequenceState:
    """Re-apply the unmask events of a trace to reconstruct the final state."""
    response = list(initial.response)
    for event in events:
        if event.kind != "unmask":
            continue
        for pos, tok in zip(event.positions, event.tokens):
            if pos < 0 or pos >= len(response) or response[pos] != MASK:
                raise IntegrityError(f"replay: position {pos} not masked at event")
            response[pos] = tok
    return replace(initial, response=tuple(response))
