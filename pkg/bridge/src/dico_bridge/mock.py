"""Loopback predictors for conformance testing.

Uniform mode answers every null slot with a flat distribution over a fixed
vocabulary; every top-1 tie goes to token 0 and the top-2 logit gap is
exactly zero.  File-replay mode plays back a recorded session: the k-th
line of the replay file answers the k-th request (id rewritten to match),
which lets golden tests pin an entire decode.
"""

from __future__ import annotations

import json

from .protocol import ProtocolViolation, Request, make_entry


class UniformModel:
    def __init__(self, vocab_size: int, topk_cap: int):
        if vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
        self.vocab_size = vocab_size
        self.topk_cap = topk_cap

    def entries(self, req: Request) -> list[dict]:
        V = self.vocab_size
        k = min(req.topk, self.topk_cap, V)
        flat = [[t, 1.0 / V] for t in range(k)]
        return [
            make_entry(pos, 0, 1.0 / V, 0.0, 0.0, flat)
            for pos in req.null_positions()
        ]


class ReplayModel:
    """Serves pre-recorded response entries, one line per request."""

    def __init__(self, path: str, topk_cap: int):
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        self.recorded = []
        for lineno, line in enumerate(lines, start=1):
            try:
                obj = json.loads(line)
                self.recorded.append(obj["entries"])
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad recorded response: {exc}")
        self.served = 0
        self.topk_cap = topk_cap

    def entries(self, req: Request) -> list[dict]:
        if self.served >= len(self.recorded):
            raise ProtocolViolation(
                f"replay exhausted after {len(self.recorded)} responses"
            )
        recorded = self.recorded[self.served]
        self.served += 1
        k = min(req.topk, self.topk_cap)
        return [
            make_entry(
                e["position"], e["argmax_token"], e["top1_prob"],
                e["top1_logit"], e["top2_logit"], e["topk"][:k],
            )
            for e in recorded
        ]
