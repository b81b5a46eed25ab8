"""Finalize phase: compound decoding gated by the top-2 logit margin."""

from __future__ import annotations

from .core import (
    DecodeConfig,
    PositionPrediction,
    SequenceState,
    Trace,
    TraceEvent,
    apply_transition,
    forward_pass,
    unmask_ratio,
)
from .predictor import MaskPredictor


def logit_margin(pred: PositionPrediction) -> float:
    """Gap between the highest and second-highest logits (>= 0)."""
    return pred.top1_logit - pred.top2_logit


def finalize_phase(
    state: SequenceState,
    predictor: MaskPredictor,
    cfg: DecodeConfig,
    trace: Trace | None = None,
) -> SequenceState:
    """Clear every remaining mask.

    Each pass unmasks all positions whose margin exceeds tau3 in parallel;
    a pass where none qualifies falls back to the single highest-confidence
    position (ties to the smaller index), so progress is guaranteed. With
    tau3 = +inf this is exactly vanilla top-1 decoding.
    """
    while not state.fully_decoded():
        state, grid = forward_pass(state, predictor, trace, "finalize")
        eligible = [e.position for e in grid.entries if logit_margin(e) > cfg.tau3]
        if eligible:
            state = apply_transition(state, grid, eligible, trace, "finalize")
            continue
        best = max(grid.entries, key=lambda e: (e.top1_prob, -e.position))
        if trace is not None:
            trace.emit(
                TraceEvent(
                    step=state.step_counter,
                    phase="finalize",
                    kind="fallback",
                    positions=(best.position,),
                    confidences=(best.top1_prob,),
                    unmask_ratio=unmask_ratio(state),
                )
            )
        state = apply_transition(state, grid, [best.position], trace, "finalize")
    return state
