"""Decode orchestration: the three-phase controller, baselines, block-wise
semi-autoregressive wrapping, and trace-derived session metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .conquer import conquer_phase
from .core import (
    MASK,
    DecodeConfig,
    DecodeError,
    IntegrityError,
    InvalidArgument,
    PredictionGrid,
    SEMI_AR,
    SequenceState,
    Trace,
    TraceEvent,
    apply_transition,
    forward_pass,
    new_sequence,
    unmask_ratio,
)
from .divide import divide_phase
from .finalize import finalize_phase
from .predictor import MarkovOracle, MaskPredictor, PredictorError
from .theory import joint_pmf


@dataclass(frozen=True)
class DecodeMetrics:
    predictor_calls: int
    tokens_per_call: float
    phase_breakdown: dict[str, int]
    oracle_log_likelihood: float | None = None


@dataclass(frozen=True)
class DecodeResult:
    final_sequence: tuple[int, ...]
    trace: tuple[TraceEvent, ...]
    metrics: DecodeMetrics


def compute_metrics(trace, oracle: MarkovOracle | None = None, prompt=()) -> DecodeMetrics:
    """Call counts and throughput from a completed trace; exact sequence
    log-likelihood when the generating oracle is supplied.

    The response length is inferred from unmask coverage, so the trace must
    decode every position exactly once.
    """
    calls = 0
    breakdown: dict[str, int] = {}
    decoded: dict[int, int] = {}
    for ev in trace:
        if ev.kind == "forward":
            calls += 1
            breakdown[ev.phase] = breakdown.get(ev.phase, 0) + 1
        elif ev.kind == "unmask":
            for pos, tok in zip(ev.positions, ev.tokens):
                if pos in decoded:
                    raise IntegrityError(f"position {pos} unmasked twice in trace")
                decoded[pos] = tok
    if calls < 1:
        raise IntegrityError("trace has no forward events")
    if not decoded:
        raise IntegrityError("trace has no unmask events")
    n = max(decoded) + 1
    if len(decoded) != n:
        raise IntegrityError("unmask coverage has gaps; trace is incomplete")
    ll = None
    if oracle is not None:
        final = tuple(decoded[i] for i in range(n))
        p = joint_pmf(oracle, tuple(prompt), final)
        ll = math.log(p) if p > 0.0 else -math.inf
    return DecodeMetrics(
        predictor_calls=calls,
        tokens_per_call=n / calls,
        phase_breakdown=breakdown,
        oracle_log_likelihood=ll,
    )


def _abort(exc: PredictorError, trace: Trace) -> DecodeError:
    err = DecodeError(f"predictor failure: {exc}")
    err.partial_trace = tuple(trace)
    return err


def _result(state: SequenceState, trace: Trace, predictor, prompt) -> DecodeResult:
    oracle = predictor if isinstance(predictor, MarkovOracle) else None
    return DecodeResult(
        final_sequence=state.response,
        trace=tuple(trace),
        metrics=compute_metrics(trace, oracle, prompt),
    )


def _enter(trace: Trace, state: SequenceState, phase: str) -> None:
    trace.emit(
        TraceEvent(
            step=state.step_counter,
            phase=phase,
            kind="phase_transition",
            unmask_ratio=unmask_ratio(state),
        )
    )


def decode_dico(prompt, response_length: int, predictor: MaskPredictor,
                cfg: DecodeConfig | None = None) -> DecodeResult:
    """Alternate exploratory division and parallel conquering, then finish
    with margin-gated compound decoding.

    Re-enters division only while each full divide+conquer cycle makes
    progress; a stalled cycle or a high unmask ratio routes to the final
    phase, which always terminates.
    """
    cfg = cfg if cfg is not None else DecodeConfig()
    state = new_sequence(prompt, response_length)
    trace = Trace()
    try:
        while not state.fully_decoded():
            before = state.unmasked_count()
            _enter(trace, state, "divide")
            state, clusters, _ratio = divide_phase(state, predictor, cfg, trace)
            if state.fully_decoded() or not len(clusters):
                break
            _enter(trace, state, "conquer")
            state, outcome = conquer_phase(state, clusters, predictor, cfg, trace)
            if outcome.next_phase == "finalize":
                break
            if state.unmasked_count() == before:
                break
        _enter(trace, state, "finalize")
        state = finalize_phase(state, predictor, cfg, trace)
    except PredictorError as exc:
        raise _abort(exc, trace) from exc
    return _result(state, trace, predictor, prompt)


def decode_vanilla(prompt, response_length: int, predictor: MaskPredictor) -> DecodeResult:
    """One forward pass per token: unmask the single most confident slot."""
    state = new_sequence(prompt, response_length)
    trace = Trace()
    try:
        while not state.fully_decoded():
            state, grid = forward_pass(state, predictor, trace, "baseline")
            best = max(grid.entries, key=lambda e: (e.top1_prob, -e.position))
            state = apply_transition(state, grid, [best.position], trace, "baseline")
    except PredictorError as exc:
        raise _abort(exc, trace) from exc
    return _result(state, trace, predictor, prompt)


def decode_topk(prompt, response_length: int, predictor: MaskPredictor, k: int) -> DecodeResult:
    """Unmask the k most confident slots per pass, re-ranking every pass."""
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    state = new_sequence(prompt, response_length)
    trace = Trace()
    try:
        while not state.fully_decoded():
            state, grid = forward_pass(state, predictor, trace, "baseline")
            ranked = sorted(grid.entries, key=lambda e: (-e.top1_prob, e.position))
            chosen = sorted(e.position for e in ranked[:k])
            state = apply_transition(state, grid, chosen, trace, "baseline")
    except PredictorError as exc:
        raise _abort(exc, trace) from exc
    return _result(state, trace, predictor, prompt)


def decode_fixed_threshold(prompt, response_length: int, predictor: MaskPredictor,
                           threshold: float = 0.95) -> DecodeResult:
    """Unmask everything above a fixed confidence bar, top-1 as fallback."""
    state = new_sequence(prompt, response_length)
    trace = Trace()
    try:
        while not state.fully_decoded():
            state, grid = forward_pass(state, predictor, trace, "baseline")
            chosen = [e.position for e in grid.entries if e.top1_prob > threshold]
            if not chosen:
                best = max(grid.entries, key=lambda e: (e.top1_prob, -e.position))
                chosen = [best.position]
            state = apply_transition(state, grid, chosen, trace, "baseline")
    except PredictorError as exc:
        raise _abort(exc, trace) from exc
    return _result(state, trace, predictor, prompt)


class _BlockView(MaskPredictor):
    """Presents one response block to an inner decoder as a whole session.

    The inner strategy works on a virtual state whose response is just the
    block; each query is spliced into the real full-length sequence (later
    blocks still masked) before hitting the base predictor, and the
    returned entries are filtered to the block and shifted block-relative.
    Full-sequence conditioning is preserved; only selection is scoped.
    """

    def __init__(self, base: MaskPredictor, prompt, full_response, lo: int, hi: int):
        self.base = base
        self.prompt = tuple(prompt)
        self.full = tuple(full_response)
        self.lo = lo
        self.hi = hi

    def predict(self, state: SequenceState) -> PredictionGrid:
        full = list(self.full)
        full[self.lo : self.hi] = state.response
        real = SequenceState(
            prompt=self.prompt, response=tuple(full), step_counter=state.step_counter
        )
        grid = self.base.predict(real)
        entries = tuple(
            replace(e, position=e.position - self.lo)
            for e in grid.entries
            if self.lo <= e.position < self.hi
        )
        return PredictionGrid(entries=entries)


def _shift_event(ev: TraceEvent, offset: int, step_base: int) -> TraceEvent:
    return replace(
        ev,
        step=ev.step + step_base,
        positions=tuple(p + offset for p in ev.positions),
        clusters=tuple((lo + offset, hi + offset) for lo, hi in ev.clusters),
    )


def _run_block(strategy: str, prompt, length: int, predictor, cfg, k, threshold) -> DecodeResult:
    if strategy == "dico":
        return decode_dico(prompt, length, predictor, cfg)
    if strategy == "vanilla":
        return decode_vanilla(prompt, length, predictor)
    if strategy == "topk":
        return decode_topk(prompt, length, predictor, k)
    if strategy == "fixed":
        return decode_fixed_threshold(prompt, length, predictor, threshold)
    raise InvalidArgument(f"unknown inner strategy {strategy!r}")


def decode_semi_ar(inner: str, prompt, response_length: int, predictor: MaskPredictor,
                   block_size: int = 128, cfg: DecodeConfig | None = None,
                   k: int = 8, threshold: float = 0.95) -> DecodeResult:
    """Decode consecutive blocks strictly left to right with an inner
    strategy scoped to one block at a time.

    Earlier blocks are visible context for later ones; positions, cluster
    intervals, and steps of the inner traces are spliced back into global
    coordinates. Inner trace events keep their block-relative unmask
    ratios, matching the block-local selection rules.
    """
    if block_size < 1:
        raise InvalidArgument(f"block_size must be >= 1, got {block_size}")
    if inner == "dico" and cfg is None:
        cfg = DecodeConfig(mode=SEMI_AR)
    prompt = tuple(prompt)
    full = [MASK] * response_length
    events: list[TraceEvent] = []
    step_base = 0
    for lo in range(0, response_length, block_size):
        hi = min(lo + block_size, response_length)
        view = _BlockView(predictor, prompt, full, lo, hi)
        context = prompt + tuple(full[:lo])
        res = _run_block(inner, context, hi - lo, view, cfg, k, threshold)
        events.extend(_shift_event(ev, lo, step_base) for ev in res.trace)
        step_base += res.metrics.predictor_calls
        full[lo:hi] = res.final_sequence
    trace = Trace()
    for ev in events:
        trace.emit(ev)
    oracle = predictor if isinstance(predictor, MarkovOracle) else None
    return DecodeResult(
        final_sequence=tuple(full),
        trace=tuple(trace),
        metrics=compute_metrics(trace, oracle, prompt),
    )
