"""Entry points: ``serve`` for a hub model, ``mock`` for loopback testing.

Both run the same serial loop on standard streams until stdin closes.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .mock import ReplayModel, UniformModel
from .server import serve_loop


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dico-bridge",
        description="Mask-prediction servers speaking the JSONL stdio protocol.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="serve a real model from the hub")
    p_serve.add_argument("model", help="model identifier (hub name or local path)")
    p_serve.add_argument("--topk", type=int, default=16,
                         help="cap on per-position topk list length")

    p_mock = sub.add_parser("mock", help="serve a loopback mock model")
    p_mock.add_argument("--vocab-size", type=int, default=4, dest="vocab_size")
    p_mock.add_argument("--mode", choices=("uniform", "file-replay"),
                        default="uniform")
    p_mock.add_argument("--replay", help="recorded session for file-replay mode")
    p_mock.add_argument("--topk", type=int, default=16)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        from .real import build

        model = build(args.model, args.topk)
    elif args.mode == "uniform":
        try:
            model = UniformModel(args.vocab_size, args.topk)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    else:
        if not args.replay:
            print("error: file-replay mode needs --replay", file=sys.stderr)
            return 2
        try:
            model = ReplayModel(args.replay, args.topk)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    serve_loop(model, sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
