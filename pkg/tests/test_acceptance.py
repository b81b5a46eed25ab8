"""Acceptance gate: one test per headline claim, one printed verdict line each.

Batch criteria run on seeded V=2 chains where the call-economics targets are
meaningful; every number is recomputed from scratch on each run.
"""

import time

import numpy as np
import pytest

from dico.cli import main
from dico.conquer import adaptive_parallel_set
from dico.core import MASK, DecodeConfig, SequenceState
from dico.engine import (
    decode_dico,
    decode_fixed_threshold,
    decode_semi_ar,
    decode_topk,
    decode_vanilla,
)
from dico.predictor import exact_conditional_marginals, random_oracle
from dico.theory import verify_theorem

from helpers import (
    brute_marginals,
    brute_parallel_set,
    matches_dico_grammar,
    phase_sequence,
    violates_block_order,
)


def verdict(ok: bool, name: str, detail: str) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def mean_ll_per_token(results, n):
    return float(np.mean([r.metrics.oracle_log_likelihood / n for r in results]))


def batch_decode(fn, seeds, V, n, kappa, **kw):
    out = []
    for s in seeds:
        oracle = random_oracle(s, V, n, kappa)
        out.append(fn((), n, oracle, **kw))
    return out


# ---------------------------------------------------------------------------


def test_accuracy_bound_holds_on_500_random_chains():
    t0 = time.perf_counter()
    verification = verify_theorem(500, vocab_range=(2, 5), length_range=(2, 8))
    elapsed = time.perf_counter() - t0
    per_trial = sum(1 for r in verification.records if r.violations)
    ok = per_trial == 0 and len(verification.records) == 500 and elapsed < 60.0
    assert verdict(
        ok,
        "bound holds on 500 chains",
        f"violations={per_trial}/500, elapsed={elapsed:.1f}s (limit 60s)",
    )


def test_bound_sweep_reaches_vanishing_tvd():
    sweep = verify_theorem(1).sweep
    by_kappa = {r.kappa: r.report for r in sweep}
    flat, sharp = by_kappa[1.0], by_kappa[16.0]
    gap = abs(sharp.p_star - sharp.q_star)
    ok = sharp.tvd < flat.tvd and sharp.tvd < 0.01 and gap < 0.01
    assert verdict(
        ok,
        "concentration sweep",
        f"tvd: {flat.tvd:.4f} -> {sharp.tvd:.2e} (<0.01), |p*-q*|={gap:.2e} (<0.01)",
    )


def test_adaptive_parallel_set_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(1000):
        m = int(rng.integers(1, 13))
        positions = rng.permutation(32)[:m]
        pairs = [(int(p), float(rng.uniform(0, 1))) for p in positions]
        if adaptive_parallel_set(pairs) != brute_parallel_set(pairs):
            mismatches += 1
    assert verdict(
        mismatches == 0,
        "adaptive parallel set vs exhaustive",
        f"mismatches={mismatches}/1000 random lists (len <= 12)",
    )


def test_call_economics_on_sharp_chains():
    seeds, V, n, kappa = range(100), 2, 32, 8.0
    t0 = time.perf_counter()
    dico = batch_decode(decode_dico, seeds, V, n, kappa)
    vanilla = batch_decode(decode_vanilla, seeds, V, n, kappa)
    elapsed = time.perf_counter() - t0
    calls = float(np.mean([r.metrics.predictor_calls for r in dico]))
    ll_d = mean_ll_per_token(dico, n)
    ll_v = mean_ll_per_token(vanilla, n)
    rel = abs(ll_d - ll_v) / abs(ll_v)
    ok = calls <= 0.6 * n and rel <= 0.05 and elapsed < 120.0
    assert verdict(
        ok,
        "call economics",
        f"mean calls={calls:.1f} (limit {0.6 * n:.1f}, vanilla {n}), "
        f"ll gap={100 * rel:.2f}% (limit 5%), elapsed={elapsed:.1f}s (limit 120s)",
    )


def test_quality_ordering_on_diffuse_chains():
    seeds, V, n, kappa = range(100), 2, 32, 4.0
    vanilla = batch_decode(decode_vanilla, seeds, V, n, kappa)
    topk8 = batch_decode(decode_topk, seeds, V, n, kappa, k=8)
    dico = batch_decode(decode_dico, seeds, V, n, kappa)
    ll_v = mean_ll_per_token(vanilla, n)
    ll_t = mean_ll_per_token(topk8, n)
    ll_d = mean_ll_per_token(dico, n)
    rel = abs(ll_d - ll_v) / abs(ll_v)
    ok = ll_t < ll_v and rel <= 0.05
    assert verdict(
        ok,
        "quality ordering",
        f"ll/token vanilla={ll_v:.4f}, topk8={ll_t:.4f} (strictly worse), "
        f"dico={ll_d:.4f} (gap {100 * rel:.2f}%, limit 5%)",
    )


def test_trajectory_guidance_trades_speed_for_quality():
    seeds, V, n, kappa = range(100), 2, 32, 8.0
    guided = batch_decode(decode_dico, seeds, V, n, kappa)
    bare_cfg = DecodeConfig(trajectory_guidance=False)
    bare = batch_decode(decode_dico, seeds, V, n, kappa, cfg=bare_cfg)
    tpc_g = float(np.mean([r.metrics.tokens_per_call for r in guided]))
    tpc_b = float(np.mean([r.metrics.tokens_per_call for r in bare]))
    ll_g = mean_ll_per_token(guided, n)
    ll_b = mean_ll_per_token(bare, n)
    ok = tpc_b >= tpc_g and ll_b <= ll_g
    assert verdict(
        ok,
        "trajectory guidance ablation",
        f"tok/call no-tg={tpc_b:.2f} >= guided={tpc_g:.2f}; "
        f"ll/token no-tg={ll_b:.4f} <= guided={ll_g:.4f}",
    )


def test_cli_runs_are_byte_identical(tmp_path, capsys):
    argv = ["run", "--oracle", "gen:seed=5,V=3,n=16,kappa=6", "--seed", "1"]
    t1, t2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    code1 = main(argv + ["--trace", str(t1)])
    code2 = main(argv + ["--trace", str(t2)])
    capsys.readouterr()
    same = t1.read_bytes() == t2.read_bytes()
    ok = code1 == code2 == 0 and same and t1.stat().st_size > 0
    with capsys.disabled():
        assert verdict(
            ok,
            "trace determinism",
            f"identical={same}, bytes={t1.stat().st_size}",
        )


def test_every_decoder_completes_with_legal_structure():
    bad = []
    checked = 0
    for seed in range(12):
        kappa = (2.0, 6.0)[seed % 2]
        oracle = random_oracle(seed, 3, 16, kappa)
        runs = {
            "dico": decode_dico((), 16, oracle),
            "vanilla": decode_vanilla((), 16, oracle),
            "topk": decode_topk((), 16, oracle, k=4),
            "fixed": decode_fixed_threshold((), 16, oracle),
            "semi-ar": decode_semi_ar("dico", (), 16, oracle, block_size=4),
        }
        for name, res in runs.items():
            checked += 1
            if MASK in res.final_sequence or len(res.final_sequence) != 16:
                bad.append(f"seed {seed} {name}: masks left")
        if not matches_dico_grammar(phase_sequence(runs["dico"].trace)):
            bad.append(f"seed {seed}: phase grammar")
        if violates_block_order(runs["semi-ar"].trace, 16, 4):
            bad.append(f"seed {seed}: block containment")
    assert verdict(
        not bad,
        "completeness and phase grammar",
        f"{checked} decodes over 12 chains, violations={bad or 0}",
    )


def test_exact_marginals_match_enumeration():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        V = int(rng.integers(2, 5))
        p_len = int(rng.integers(0, 3))
        r_len = int(rng.integers(max(1, 2 - p_len), 9))
        oracle = random_oracle(int(rng.integers(0, 10_000)), V, p_len + r_len,
                               float(rng.uniform(0.5, 6.0)))
        prompt = tuple(int(t) for t in rng.integers(0, V, p_len))
        response = [MASK] * r_len
        for pos in range(r_len):
            if rng.random() < 0.4 and sum(t == MASK for t in response) > 1:
                response[pos] = int(rng.integers(0, V))
        state = SequenceState(prompt=prompt, response=tuple(response), step_counter=0)
        grid = exact_conditional_marginals(oracle, state)
        brute = brute_marginals(oracle, prompt, tuple(response))
        for entry in grid.entries:
            got = dict(entry.topk)
            for tok, want in enumerate(brute[entry.position]):
                worst = max(worst, abs(got.get(tok, 0.0) - want))
    assert verdict(
        worst <= 1e-9,
        "exact marginals vs enumeration",
        f"max abs error {worst:.2e} over 200 instances (tolerance 1e-9)",
    )
