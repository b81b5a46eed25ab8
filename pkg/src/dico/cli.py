"""Command-line front end.

Four subcommands: ``run`` decodes one sequence and prints a metrics summary,
``compare`` races strategies and ablations over a seeded oracle batch,
``verify-theorem`` drives the product-vs-joint bound checker, and
``export-trace`` turns a trace file into plot-ready CSV.

Config precedence is flags > config file > built-in defaults; the config
file is flat ``key=value`` lines using DecodeConfig field names.  All
randomness flows from one seed (flag, else the DICO_SEED environment
variable); batch trial k runs on seed + k.  Exit codes: 0 success, 1
predictor or integrity failure, 2 usage/validation error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from typing import Sequence

from .core import (
    NON_AR,
    SEMI_AR,
    DecodeConfig,
    DecodeError,
    InvalidArgument,
    TraceEvent,
    dumps_json,
    trace_from_jsonl,
    trace_to_jsonl,
)
from .engine import (
    DecodeResult,
    decode_dico,
    decode_fixed_threshold,
    decode_semi_ar,
    decode_topk,
    decode_vanilla,
)
from .predictor import MarkovOracle, PredictorError, random_oracle
from .theory import report_jsonl, verify_theorem

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

GEN_DEFAULTS = {"V": 4, "n": 32, "kappa": 8.0}


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


# --- oracle sources ---------------------------------------------------------


def parse_gen_spec(body: str, default_seed: int) -> dict:
    """Parse ``seed=7,V=4,n=32,kappa=8`` with defaults for missing keys."""
    params = {"seed": default_seed, **GEN_DEFAULTS}
    if body.strip():
        for item in body.split(","):
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or key not in params:
                raise UsageError(f"bad generator parameter {item!r}")
            try:
                params[key] = float(value) if key == "kappa" else int(value)
            except ValueError:
                raise UsageError(f"bad value for generator key {key!r}: {value!r}")
    return params


def load_oracle(spec: str, prompt: tuple[int, ...], default_seed: int):
    """Resolve an ``--oracle`` spec to (oracle, response_length, base_seed).

    base_seed is None for file-backed oracles (no batch semantics).
    """
    if spec.startswith("gen:"):
        params = parse_gen_spec(spec[len("gen:"):], default_seed)
        n = params["n"]
        oracle = random_oracle(
            params["seed"], params["V"], len(prompt) + n, params["kappa"]
        )
        return oracle, n, params["seed"]
    if spec.startswith("file:"):
        path = spec[len("file:"):]
        try:
            with open(path, "r", encoding="utf-8") as fh:
                oracle = MarkovOracle.from_json(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read oracle file {path!r}: {exc}")
        n = oracle.length - len(prompt)
        if n < 1:
            raise UsageError(
                f"oracle length {oracle.length} leaves no response after "
                f"a {len(prompt)}-token prompt"
            )
        return oracle, n, None
    raise UsageError(f"oracle spec must start with 'gen:' or 'file:', got {spec!r}")


def regenerate(spec: str, prompt: tuple[int, ...], seed: int) -> MarkovOracle:
    """Build trial oracle for a batch: same gen parameters, shifted seed."""
    params = parse_gen_spec(spec[len("gen:"):], seed)
    return random_oracle(seed, params["V"], len(prompt) + params["n"], params["kappa"])


def parse_prompt(text: str | None) -> tuple[int, ...]:
    if not text:
        return ()
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"prompt must be comma-separated integers, got {text!r}")


def check_prompt(tokens: tuple[int, ...], vocab_size: int) -> None:
    for t in tokens:
        if not 0 <= t < vocab_size:
            raise UsageError(f"prompt token {t} outside vocabulary [0, {vocab_size})")


# --- config assembly --------------------------------------------------------

_CONFIG_PARSERS = {
    "alpha": float,
    "beta": float,
    "tau1": float,
    "tau2": float,
    "tau3": float,
    "r_gate": float,
    "t_max": int,
    "n_seeds": int,
    "block_size": int,
    "rng_seed": int,
    "mode": str,
    "trajectory_guidance": lambda s: s.lower() in ("1", "true", "yes"),
    "fixed_parallel_threshold": float,
}


def read_config_file(path: str) -> dict:
    overrides = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path!r}: {exc}")
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CONFIG_PARSERS:
            raise UsageError(f"{path}:{lineno}: bad config line {raw!r}")
        try:
            overrides[key] = _CONFIG_PARSERS[key](value.strip())
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key!r}")
    return overrides


def assemble_config(args: argparse.Namespace) -> dict:
    """Merge config sources into a kwargs dict (defaults left implicit)."""
    kwargs: dict = {}
    if args.config:
        kwargs.update(read_config_file(args.config))
    flag_map = {
        "tau1": args.tau1,
        "tau2": args.tau2,
        "tau3": args.tau3,
        "r_gate": args.r_gate,
        "t_max": args.t_max,
        "n_seeds": args.n_seeds,
        "block_size": args.block_size,
    }
    for key, value in flag_map.items():
        if value is not None:
            kwargs[key] = value
    if args.no_tg:
        kwargs["trajectory_guidance"] = False
    if args.no_lm:
        kwargs["tau3"] = math.inf
    if args.fixed_parallel is not None:
        kwargs["fixed_parallel_threshold"] = args.fixed_parallel
    kwargs["rng_seed"] = args.seed
    return kwargs


def make_config(kwargs: dict, mode: str) -> DecodeConfig:
    merged = dict(kwargs)
    merged["mode"] = mode
    return DecodeConfig(**merged)


# --- strategies -------------------------------------------------------------

_DICO_MODS = ("no-tg", "no-lm")


def parse_strategy(token: str) -> tuple[str, dict]:
    """Split a strategy token into (family, params).

    Spellings: ``dico`` (with optional ablation modifiers such as
    ``dico:no-tg``, ``dico:fixed=0.9``, ``dico:n-seeds=4``), ``vanilla``,
    ``topk`` / ``topk:<k>``, ``fixed`` / ``fixed:<thr>``, and
    ``semi-ar:<inner>``.
    """
    head, _, rest = token.partition(":")
    if head == "dico":
        params: dict = {}
        for mod in filter(None, rest.split(":")):
            key, sep, value = mod.partition("=")
            if key == "no-tg":
                params["trajectory_guidance"] = False
            elif key == "no-lm":
                params["tau3"] = math.inf
            elif key == "fixed" and sep:
                params["fixed_parallel_threshold"] = float(value)
            elif key == "n-seeds" and sep:
                params["n_seeds"] = int(value)
            else:
                raise UsageError(f"unknown dico modifier {mod!r} in {token!r}")
        return "dico", params
    if head == "vanilla" and not rest:
        return "vanilla", {}
    if head == "topk":
        if not rest:
            return "topk", {}
        return "topk", {"k": int(rest)}
    if head == "fixed":
        if not rest:
            return "fixed", {}
        return "fixed", {"threshold": float(rest)}
    if head == "semi-ar":
        if rest not in ("dico", "vanilla", "topk", "fixed"):
            raise UsageError(f"semi-ar inner strategy must be one of "
                             f"dico/vanilla/topk/fixed, got {rest!r}")
        return "semi-ar", {"inner": rest}
    raise UsageError(f"unknown strategy {token!r}")


def execute(token: str, prompt: tuple[int, ...], n: int, oracle,
            cfg_kwargs: dict, args: argparse.Namespace) -> DecodeResult:
    family, params = parse_strategy(token)
    if family == "dico":
        merged = dict(cfg_kwargs)
        merged.update(params)
        return decode_dico(prompt, n, oracle, make_config(merged, NON_AR))
    if family == "vanilla":
        return decode_vanilla(prompt, n, oracle)
    if family == "topk":
        k = params.get("k", args.k)
        return decode_topk(prompt, n, oracle, k)
    if family == "fixed":
        threshold = params.get("threshold", args.threshold)
        return decode_fixed_threshold(prompt, n, oracle, threshold)
    # semi-ar: the inner dico config switches mode (and its n_seeds default).
    inner = params["inner"]
    cfg = make_config(cfg_kwargs, SEMI_AR) if inner == "dico" else None
    block = cfg_kwargs.get("block_size", 128)
    return decode_semi_ar(inner, prompt, n, oracle, block_size=block,
                          cfg=cfg, k=args.k, threshold=args.threshold)


def metrics_obj(token: str, result: DecodeResult, n: int) -> dict:
    m = result.metrics
    ll = m.oracle_log_likelihood
    return {
        "strategy": token,
        "response_length": n,
        "predictor_calls": m.predictor_calls,
        "tokens_per_call": m.tokens_per_call,
        "phase_breakdown": m.phase_breakdown,
        "oracle_log_likelihood": ll,
        "log_likelihood_per_token": None if ll is None else ll / n,
        "final_sequence": list(result.final_sequence),
    }


# --- subcommands ------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    prompt = parse_prompt(args.prompt)
    oracle, n, _ = load_oracle(args.oracle, prompt, args.seed)
    check_prompt(prompt, oracle.vocab_size)
    cfg_kwargs = assemble_config(args)
    parse_strategy(args.strategy)  # validate before any work
    result = execute(args.strategy, prompt, n, oracle, cfg_kwargs, args)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(trace_to_jsonl(result.trace))
    summary = metrics_obj(args.strategy, result, n)
    text = dumps_json(summary)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    if args.batch < 1:
        raise UsageError(f"batch must be >= 1, got {args.batch}")
    tokens = [t.strip() for t in args.strategies.split(",") if t.strip()]
    if not tokens:
        raise UsageError("no strategies given")
    for token in tokens:
        parse_strategy(token)
    if args.oracle.startswith("file:") and args.batch > 1:
        raise UsageError("file-backed oracles only support batch=1")

    prompt = parse_prompt(args.prompt)
    totals = {t: {"calls": 0.0, "tpc": 0.0, "ll": 0.0, "agree": 0.0} for t in tokens}
    cfg_kwargs = assemble_config(args)
    oracle0, n, base_seed = load_oracle(args.oracle, prompt, args.seed)
    check_prompt(prompt, oracle0.vocab_size)
    for trial in range(args.batch):
        if base_seed is None or trial == 0:
            oracle = oracle0
        else:
            oracle = regenerate(args.oracle, prompt, base_seed + trial)
        reference = decode_vanilla(prompt, n, oracle).final_sequence
        for token in tokens:
            result = execute(token, prompt, n, oracle, cfg_kwargs, args)
            bucket = totals[token]
            bucket["calls"] += result.metrics.predictor_calls
            bucket["tpc"] += result.metrics.tokens_per_call
            ll = result.metrics.oracle_log_likelihood
            bucket["ll"] += (ll / n) if ll is not None else math.nan
            matches = sum(a == b for a, b in zip(result.final_sequence, reference))
            bucket["agree"] += matches / n

    rows = []
    for token in tokens:
        b = totals[token]
        rows.append({
            "strategy": token,
            "mean_predictor_calls": b["calls"] / args.batch,
            "mean_tokens_per_call": b["tpc"] / args.batch,
            "mean_log_likelihood_per_token": b["ll"] / args.batch,
            "vanilla_agreement": b["agree"] / args.batch,
        })
    header = f"{'strategy':<20} {'calls':>8} {'tok/call':>9} {'ll/tok':>10} {'agree':>7}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(f"{row['strategy']:<20} {row['mean_predictor_calls']:>8.2f} "
              f"{row['mean_tokens_per_call']:>9.3f} "
              f"{row['mean_log_likelihood_per_token']:>10.4f} "
              f"{row['vanilla_agreement']:>7.3f}")
    if args.json:
        obj = {"batch": args.batch, "oracle": args.oracle, "strategies": rows}
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(dumps_json(obj) + "\n")
    return EXIT_OK


def cmd_verify_theorem(args: argparse.Namespace) -> int:
    verification = verify_theorem(
        args.trials,
        vocab_range=(args.v_min, args.v_max),
        length_range=(args.n_min, args.n_max),
        rng_seed=args.seed,
    )
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(report_jsonl(verification))
    bad = verification.violation_count
    print(f"trials={len(verification.records)} violations={bad} "
          f"sweep_violations={len(verification.sweep_violations)} "
          f"report={args.report}")
    for line in verification.sweep_violations:
        print(f"sweep: {line}")
    return EXIT_OK if verification.ok else EXIT_RUNTIME


def _scatter_rows(events: Sequence[TraceEvent]):
    unmasked_at: dict[int, set[int]] = {}
    for ev in events:
        if ev.kind == "unmask":
            unmasked_at.setdefault(ev.step, set()).update(ev.positions)
    for ev in events:
        if ev.kind != "forward":
            continue
        hot = unmasked_at.get(ev.step, set())
        for pos, conf in zip(ev.positions, ev.confidences):
            state = "unmasked" if pos in hot else "masked"
            yield ev.step, pos, conf, state


def _heatmap_rows(events: Sequence[TraceEvent]):
    unmask_step: dict[int, int] = {}
    last_step = 0
    for ev in events:
        last_step = max(last_step, ev.step)
        if ev.kind == "unmask":
            for pos in ev.positions:
                unmask_step[pos] = ev.step
    n = max(unmask_step) + 1 if unmask_step else 0
    yield ["step"] + [str(p) for p in range(n)]
    for step in range(1, last_step + 1):
        cells = [
            unmask_step[p] if p in unmask_step and unmask_step[p] <= step else -1
            for p in range(n)
        ]
        yield [str(step)] + [str(c) for c in cells]


def cmd_export_trace(args: argparse.Namespace) -> int:
    try:
        with open(args.trace, "r", encoding="utf-8") as fh:
            events = trace_from_jsonl(fh.read())
    except OSError as exc:
        print(f"error: cannot read trace: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not events:
        print("error: trace file holds no events", file=sys.stderr)
        return EXIT_RUNTIME

    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        if args.format == "scatter":
            writer.writerow(["step", "position", "confidence", "state"])
            for step, pos, conf, state in _scatter_rows(events):
                writer.writerow([step, pos, repr(conf), state])
        else:
            for row in _heatmap_rows(events):
                writer.writerow(row)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--prompt", help="comma-separated prompt tokens")
    p.add_argument("--tau1", type=float, default=None)
    p.add_argument("--tau2", type=float, default=None)
    p.add_argument("--tau3", type=float, default=None)
    p.add_argument("--r-gate", type=float, default=None, dest="r_gate")
    p.add_argument("--t-max", type=int, default=None, dest="t_max")
    p.add_argument("--n-seeds", type=int, default=None, dest="n_seeds")
    p.add_argument("--block-size", type=int, default=None, dest="block_size")
    p.add_argument("--k", type=int, default=8, help="k for the top-k strategy")
    p.add_argument("--threshold", type=float, default=0.95,
                   help="threshold for the fixed strategy")
    p.add_argument("--no-tg", action="store_true",
                   help="disable trajectory guidance (weight = 1 everywhere)")
    p.add_argument("--no-lm", action="store_true",
                   help="disable the logit-margin rule (threshold = +inf)")
    p.add_argument("--fixed-parallel", type=float, default=None,
                   help="replace the adaptive parallel rule with a fixed threshold")


def _seed_default() -> int:
    raw = os.environ.get("DICO_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"DICO_SEED must be an integer, got {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dico",
        description="Divide-and-conquer parallel decoding over exact tabular oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="decode one sequence")
    p_run.add_argument("--oracle", required=True,
                       help="gen:seed=7,V=4,n=32,kappa=8 or file:oracle.json")
    p_run.add_argument("--strategy", default="dico",
                       help="dico | vanilla | topk[:k] | fixed[:thr] | semi-ar:<inner>")
    p_run.add_argument("--trace", help="write trace JSONL here")
    p_run.add_argument("--metrics", help="also write the metrics JSON here")
    p_run.add_argument("--seed", type=int, default=None)
    _add_decode_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="race strategies over an oracle batch")
    p_cmp.add_argument("--batch", type=int, default=1)
    p_cmp.add_argument("--oracle", required=True)
    p_cmp.add_argument("--strategies", required=True,
                       help="comma-separated strategy tokens")
    p_cmp.add_argument("--json", help="write machine-readable results here")
    p_cmp.add_argument("--seed", type=int, default=None)
    _add_decode_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_thm = sub.add_parser("verify-theorem", help="check the factorization bound")
    p_thm.add_argument("--trials", type=int, default=500)
    p_thm.add_argument("--v-min", type=int, default=2, dest="v_min")
    p_thm.add_argument("--v-max", type=int, default=5, dest="v_max")
    p_thm.add_argument("--n-min", type=int, default=2, dest="n_min")
    p_thm.add_argument("--n-max", type=int, default=8, dest="n_max")
    p_thm.add_argument("--seed", type=int, default=None)
    p_thm.add_argument("--report", default="theorem_report.jsonl")
    p_thm.set_defaults(func=cmd_verify_theorem)

    p_exp = sub.add_parser("export-trace", help="render a trace to CSV")
    p_exp.add_argument("trace", help="trace JSONL path")
    p_exp.add_argument("--format", required=True, choices=("scatter", "heatmap"))
    p_exp.add_argument("--out", help="output CSV path (default stdout)")
    p_exp.set_defaults(func=cmd_export_trace)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "seed", None) is None:
            args.seed = _seed_default()
        return args.func(args)
    except (UsageError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PredictorError, DecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
