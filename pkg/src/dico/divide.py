"""Divide phase: calibrated seed scoring, seed acceptance, cluster growth.

Seeds are masked positions whose trajectory-guided confidence clears tau1
after Gaussian suppression keeps them spatially separated; accepted seeds
are unmasked immediately and grown into contiguous clusters whose mean
confidence (density) gates convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import (
    DecodeConfig,
    InvalidArgument,
    PredictionGrid,
    SequenceState,
    Trace,
    TraceEvent,
    apply_transition,
    forward_pass,
    unmask_ratio,
)
from .predictor import MaskPredictor


@dataclass(frozen=True)
class Cluster:
    """Contiguous inclusive interval [lo, hi] of response positions."""

    lo: int
    hi: int
    density: float = 0.0
    active: bool = True

    def interval(self) -> tuple[int, int]:
        return (self.lo, self.hi)

    def masked_members(self, state: SequenceState) -> list[int]:
        return [p for p in range(self.lo, self.hi + 1) if state.is_masked(p)]


@dataclass(frozen=True)
class ClusterSet:
    """Disjoint clusters sorted by lo."""

    clusters: tuple[Cluster, ...] = ()

    def __post_init__(self):
        prev_hi = -1
        for c in self.clusters:
            if c.lo > c.hi:
                raise InvalidArgument(f"cluster [{c.lo},{c.hi}] is inverted")
            if c.lo <= prev_hi:
                raise InvalidArgument("clusters must be disjoint and sorted")
            prev_hi = c.hi

    def __len__(self) -> int:
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)

    def intervals(self) -> tuple[tuple[int, int], ...]:
        return tuple(c.interval() for c in self.clusters)


def suppression(i: int, j: int, n: int) -> float:
    """Gaussian separation factor between seed i and position j.

    sigma = n / (3*sqrt(2)), so 2*sigma^2 = n^2 / 9. Returns 0 at i == j and
    approaches 1 with distance.
    """
    d2 = float(i - j) ** 2
    return 1.0 - math.exp(-d2 * 9.0 / (n * n))


def trajectory_weight(j: int, ratio: float, cfg: DecodeConfig, n: int) -> float:
    """Position-dependent damping that biases early decoding left-to-right.

    exp(j * ln(clip(alpha*R + beta, 0, 1)) / n); identically 1 when the
    trajectory-guidance ablation is off.
    """
    if not cfg.trajectory_guidance:
        return 1.0
    base = min(max(cfg.alpha * ratio + cfg.beta, 0.0), 1.0)
    if base == 0.0:
        return 1.0 if j == 0 else 0.0
    return math.exp(j * math.log(base) / n)


def guided_confidences(
    grid: PredictionGrid, ratio: float, cfg: DecodeConfig, n: int
) -> dict[int, float]:
    """c_w(j) = c(j) * W(j) for every masked position in the grid."""
    return {
        e.position: e.top1_prob * trajectory_weight(e.position, ratio, cfg, n)
        for e in grid.entries
    }


def calibrated_scores(
    grid: PredictionGrid,
    accepted_seeds: list[int],
    ratio: float,
    cfg: DecodeConfig,
    n: int,
) -> list[float]:
    """Per-masked-position score c_w(j) * prod_i D(i, j) over accepted seeds.

    Multi-seed suppression composes multiplicatively (Soft-NMS-style
    iterative rescoring); with no seeds the product is empty and the score
    is the trajectory-guided confidence itself.
    """
    scores = []
    for e in grid.entries:
        s = e.top1_prob * trajectory_weight(e.position, ratio, cfg, n)
        for i in accepted_seeds:
            s *= suppression(i, e.position, n)
        scores.append(s)
    return scores


def select_seeds(
    grid: PredictionGrid,
    state: SequenceState,
    cfg: DecodeConfig,
    ratio: float | None = None,
) -> list[int]:
    """Greedy seed selection, at most n_seeds rounds.

    Each round takes the argmax of the suppressed scores (ties -> smallest
    index) and accepts it iff its unsuppressed c_w exceeds tau1; rejection
    terminates the loop. Returns accepted positions in acceptance order.
    """
    n = state.response_len
    if ratio is None:
        ratio = unmask_ratio(state)
    positions = grid.positions()
    if not positions:
        return []
    c_w = guided_confidences(grid, ratio, cfg, n)
    scores = dict(c_w)
    accepted: list[int] = []
    for _ in range(cfg.n_seeds):
        candidates = [p for p in positions if p not in accepted]
        if not candidates:
            break
        best = max(candidates, key=lambda p: (scores[p], -p))
        if not c_w[best] > cfg.tau1:
            break
        accepted.append(best)
        for p in positions:
            scores[p] *= suppression(best, p, n)
    return accepted


def _merge_intervals(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Merge overlapping or touching intervals."""
    merged: list[tuple[int, int]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def expand_and_merge(
    seeds: list[int],
    c_w: dict[int, float],
    existing: ClusterSet,
    state: SequenceState,
    cfg: DecodeConfig,
    trace: Trace | None = None,
) -> ClusterSet:
    """Grow clusters bidirectionally from each seed and merge on contact.

    Growth starts at the boundaries of the seed's containing cluster when
    one exists, else at a fresh anchor on the seed, and walks outward over
    masked positions with c_w > tau1; the first failure stops that side.
    Unmasked positions also stop growth, except the just-unmasked seeds
    themselves, which the interval passes over. Clusters left with no masked
    members are dropped; density is the mean c_w over masked members.
    """
    n = state.response_len
    seed_set = set(seeds)
    intervals = [c.interval() for c in existing]

    def grows(p: int) -> bool:
        if p < 0 or p >= n:
            return False
        if state.is_masked(p):
            return c_w.get(p, 0.0) > cfg.tau1
        return p in seed_set

    for seed in sorted(seeds):
        anchor = None
        for idx, (lo, hi) in enumerate(intervals):
            if lo <= seed <= hi:
                anchor = idx
                break
        if anchor is None:
            intervals.append((seed, seed))
            anchor = len(intervals) - 1
        lo, hi = intervals[anchor]
        while grows(lo - 1):
            lo -= 1
        while grows(hi + 1):
            hi += 1
        intervals[anchor] = (lo, hi)
        before = len(intervals)
        intervals = _merge_intervals(intervals)
        if trace is not None and len(intervals) < before:
            trace.emit(
                TraceEvent(
                    step=state.step_counter,
                    phase="divide",
                    kind="cluster_merge",
                    clusters=tuple(intervals),
                    unmask_ratio=unmask_ratio(state),
                )
            )

    clusters = []
    for lo, hi in _merge_intervals(intervals):
        members = [p for p in range(lo, hi + 1) if state.is_masked(p)]
        if not members:
            continue
        density = sum(c_w.get(p, 0.0) for p in members) / len(members)
        clusters.append(Cluster(lo=lo, hi=hi, density=density))
    return ClusterSet(tuple(clusters))


def divide_phase(
    state: SequenceState,
    predictor: MaskPredictor,
    cfg: DecodeConfig,
    trace: Trace | None = None,
) -> tuple[SequenceState, ClusterSet, float]:
    """Run exploratory iterations until clusters reach density tau2.

    Each iteration: seeding forward pass, seed acceptance and unmasking in
    one transition, a fresh forward pass, then cluster expansion with the
    updated guided confidences. Converges when any cluster density reaches
    tau2; at t_max with none qualifying, falls back to the single densest
    cluster (trace-flagged), or an empty set when none formed at all.
    """
    n = state.response_len
    clusters = ClusterSet()
    for _ in range(cfg.t_max):
        if state.fully_decoded():
            break
        ratio = unmask_ratio(state)
        state, grid = forward_pass(state, predictor, trace, "divide")
        seeds = select_seeds(grid, state, cfg, ratio)
        if seeds:
            c_w_seed = guided_confidences(grid, ratio, cfg, n)
            if trace is not None:
                trace.emit(
                    TraceEvent(
                        step=state.step_counter,
                        phase="divide",
                        kind="seed_accept",
                        positions=tuple(seeds),
                        confidences=tuple(c_w_seed[p] for p in seeds),
                        unmask_ratio=ratio,
                    )
                )
            state = apply_transition(state, grid, seeds, trace, "divide")
            if state.fully_decoded():
                grid = None
            else:
                state, grid = forward_pass(state, predictor, trace, "divide")
        c_w = guided_confidences(grid, ratio, cfg, n) if grid is not None else {}
        clusters = expand_and_merge(seeds, c_w, clusters, state, cfg, trace)
        if trace is not None and len(clusters):
            trace.emit(
                TraceEvent(
                    step=state.step_counter,
                    phase="divide",
                    kind="cluster_form",
                    clusters=clusters.intervals(),
                    confidences=tuple(c.density for c in clusters),
                    unmask_ratio=unmask_ratio(state),
                )
            )
        qualifying = [c for c in clusters if c.density >= cfg.tau2]
        if qualifying:
            return state, ClusterSet(tuple(qualifying)), unmask_ratio(state)
        if not seeds:
            # Deterministic predictor, unchanged state: further iterations
            # would repeat verbatim.
            break
    if len(clusters):
        best = max(clusters, key=lambda c: (c.density, -c.lo))
        if trace is not None:
            trace.emit(
                TraceEvent(
                    step=state.step_counter,
                    phase="divide",
                    kind="fallback",
                    clusters=(best.interval(),),
                    confidences=(best.density,),
                    unmask_ratio=unmask_ratio(state),
                )
            )
        return state, ClusterSet((best,)), unmask_ratio(state)
    return state, ClusterSet(), unmask_ratio(state)
