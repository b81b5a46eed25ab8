"""Conquer phase: adaptive parallel unmasking inside active clusters.

Each pass re-fits cluster boundaries to the current confidence landscape,
unmasks the largest admissible set per cluster in one combined transition,
and retires clusters whose confidence density decays below tau2. The exit
ratio against r_gate decides whether decoding re-divides or finalizes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .core import (
    DecodeConfig,
    PredictionGrid,
    SequenceState,
    Trace,
    TraceEvent,
    apply_transition,
    forward_pass,
    unmask_ratio,
)
from .divide import Cluster, ClusterSet, _merge_intervals
from .predictor import MaskPredictor


@dataclass(frozen=True)
class ConquerOutcome:
    """Phase summary: where to go next and how much work was done."""

    next_phase: str  # "divide" or "finalize"
    steps_used: int
    tokens_unmasked: int


def adaptive_parallel_set(confidences: list[tuple[int, float]]) -> list[int]:
    """Largest S with (|S|+1) * (1 - c(i)) < 1 for every member i.

    Sorting by descending confidence makes the constraint bind at the prefix
    minimum, and the left side only grows with prefix length, so the maximal
    set is the longest admissible prefix. Ties at the cutoff go to the
    smaller position. Returns positions in ascending order.
    """
    ranked = sorted(confidences, key=lambda pc: (-pc[1], pc[0]))
    picked: list[int] = []
    for size, (pos, c) in enumerate(ranked, start=1):
        if (size + 1) * (1.0 - c) < 1.0:
            picked.append(pos)
        else:
            break
    return sorted(picked)


def adapt_boundaries(
    cluster: Cluster, state: SequenceState, grid: PredictionGrid, cfg: DecodeConfig
) -> Cluster:
    """Trim sub-tau2 boundary members, then extend over tau2 neighbors.

    Unmasked positions inside the interval stay (membership enumerates
    masked slots only); extension stops at unmasked positions. A cluster
    left with no masked members comes back deactivated with zero density;
    otherwise density is recomputed as the mean raw confidence.
    """
    n = state.response_len
    c = {e.position: e.top1_prob for e in grid.entries}
    lo, hi = cluster.lo, cluster.hi

    def members() -> list[int]:
        return [p for p in range(lo, hi + 1) if state.is_masked(p)]

    while True:
        ms = members()
        if not ms:
            return replace(cluster, density=0.0, active=False)
        if c[ms[0]] < cfg.tau2:
            lo = ms[0] + 1
        elif c[ms[-1]] < cfg.tau2:
            hi = ms[-1] - 1
        else:
            break
        if lo > hi:
            return replace(cluster, density=0.0, active=False)

    while lo - 1 >= 0 and state.is_masked(lo - 1) and c[lo - 1] >= cfg.tau2:
        lo -= 1
    while hi + 1 < n and state.is_masked(hi + 1) and c[hi + 1] >= cfg.tau2:
        hi += 1

    ms = members()
    density = sum(c[p] for p in ms) / len(ms)
    return Cluster(lo=lo, hi=hi, density=density, active=True)


def _remerge(
    adapted: list[Cluster], state: SequenceState, c: dict[int, float]
) -> list[Cluster]:
    """Fuse adapted clusters that grew into contact; densities recomputed."""
    if not adapted:
        return []
    out = []
    for lo, hi in _merge_intervals([cl.interval() for cl in adapted]):
        ms = [p for p in range(lo, hi + 1) if state.is_masked(p)]
        out.append(Cluster(lo, hi, sum(c[p] for p in ms) / len(ms), True))
    return out


def _parallel_select(
    clusters: list[Cluster], state: SequenceState, c: dict[int, float], cfg: DecodeConfig
) -> list[int]:
    """Per-cluster unmask set; a fixed threshold replaces the adaptive rule
    when the ablation is armed."""
    selected: list[int] = []
    for cl in clusters:
        pool = [(p, c[p]) for p in cl.masked_members(state)]
        if cfg.fixed_parallel_threshold is not None:
            selected.extend(p for p, cp in pool if cp > cfg.fixed_parallel_threshold)
        else:
            selected.extend(adaptive_parallel_set(pool))
    return sorted(selected)


def conquer_phase(
    state: SequenceState,
    clusters: ClusterSet,
    predictor: MaskPredictor,
    cfg: DecodeConfig,
    trace: Trace | None = None,
) -> tuple[SequenceState, ConquerOutcome]:
    """Decode active clusters in parallel until all deactivate.

    Per pass: forward, boundary adaptation (with contact merging), one
    combined transition over every cluster's admissible set, density and
    emptiness deactivation, and a single-token progress fallback whenever a
    pass with live clusters unmasked nothing. Every pass therefore unmasks
    a token or retires a cluster, so the loop terminates.
    """
    active = [cl for cl in clusters if cl.active]
    steps = 0
    total_unmasked = 0
    while active and not state.fully_decoded():
        state, grid = forward_pass(state, predictor, trace, "conquer")
        steps += 1
        c = {e.position: e.top1_prob for e in grid.entries}

        adapted, dropped = [], []
        for cl in active:
            cl2 = adapt_boundaries(cl, state, grid, cfg)
            (adapted if cl2.active else dropped).append(cl2)
        merged = _remerge(adapted, state, c)
        if trace is not None and merged:
            if len(merged) < len(adapted):
                trace.emit(
                    TraceEvent(
                        step=state.step_counter,
                        phase="conquer",
                        kind="cluster_merge",
                        clusters=tuple(cl.interval() for cl in merged),
                        unmask_ratio=unmask_ratio(state),
                    )
                )
            trace.emit(
                TraceEvent(
                    step=state.step_counter,
                    phase="conquer",
                    kind="cluster_adapt",
                    clusters=tuple(cl.interval() for cl in merged),
                    confidences=tuple(cl.density for cl in merged),
                    unmask_ratio=unmask_ratio(state),
                )
            )

        selected = _parallel_select(merged, state, c, cfg)
        if selected:
            state = apply_transition(state, grid, selected, trace, "conquer")
            total_unmasked += len(selected)

        survivors = []
        for cl in merged:
            if cl.density < cfg.tau2 or not cl.masked_members(state):
                dropped.append(replace(cl, active=False))
            else:
                survivors.append(cl)

        if not selected and survivors:
            pool = [p for cl in survivors for p in cl.masked_members(state)]
            best = max(pool, key=lambda p: (c[p], -p))
            if trace is not None:
                trace.emit(
                    TraceEvent(
                        step=state.step_counter,
                        phase="conquer",
                        kind="fallback",
                        positions=(best,),
                        confidences=(c[best],),
                        unmask_ratio=unmask_ratio(state),
                    )
                )
            state = apply_transition(state, grid, [best], trace, "conquer")
            total_unmasked += 1
            emptied = [cl for cl in survivors if not cl.masked_members(state)]
            dropped.extend(replace(cl, active=False) for cl in emptied)
            survivors = [cl for cl in survivors if cl.masked_members(state)]

        if trace is not None and dropped:
            trace.emit(
                TraceEvent(
                    step=state.step_counter,
                    phase="conquer",
                    kind="cluster_deactivate",
                    clusters=tuple(cl.interval() for cl in dropped),
                    confidences=tuple(cl.density for cl in dropped),
                    unmask_ratio=unmask_ratio(state),
                )
            )
        active = survivors

    done = state.fully_decoded() or unmask_ratio(state) >= cfg.r_gate
    outcome = ConquerOutcome(
        next_phase="finalize" if done else "divide",
        steps_used=steps,
        tokens_unmasked=total_unmasked,
    )
    return state, outcome
