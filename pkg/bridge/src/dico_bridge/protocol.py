"""Server-side protocol types and validation.

One request per line, one response per line, UTF-8 JSONL over standard
streams.  Masked slots arrive as nulls; every response entry describes one
null position with absolute indices into the request's token array.  Field
names are the contract and must not drift:

    request:  {"id", "tokens", "prompt_len", "topk"}
    response: {"id", "entries"} with entries of
              {"position", "argmax_token", "top1_prob",
               "top1_logit", "top2_logit", "topk"}

Anything a peer could get wrong raises ProtocolViolation, which the serve
loop turns into an ``{"id", "error"}`` object on the same stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


class ProtocolViolation(Exception):
    """Request the server refuses to answer with predictions."""


@dataclass(frozen=True)
class Request:
    id: int
    tokens: tuple  # ints and Nones, prompt first
    prompt_len: int
    topk: int

    def null_positions(self) -> list[int]:
        return [i for i, tok in enumerate(self.tokens) if tok is None]


def parse_line(line: str):
    """Parse one line into (echoable id or None, payload object).

    The id comes back even when the payload later fails validation, so
    error objects can name the request they refuse.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolViolation(f"unparseable request: {exc}") from None
    rid = obj.get("id") if isinstance(obj, dict) else None
    return rid, obj


def validate_request(obj) -> Request:
    if not isinstance(obj, dict):
        raise ProtocolViolation("request is not a JSON object")
    missing = {"id", "tokens", "prompt_len", "topk"} - set(obj)
    if missing:
        raise ProtocolViolation(f"request missing keys {sorted(missing)}")
    rid, tokens = obj["id"], obj["tokens"]
    prompt_len, topk = obj["prompt_len"], obj["topk"]
    if not isinstance(rid, int) or isinstance(rid, bool):
        raise ProtocolViolation(f"id must be an integer, got {rid!r}")
    if not isinstance(tokens, list) or not tokens:
        raise ProtocolViolation("tokens must be a non-empty array")
    if not isinstance(prompt_len, int) or not 0 <= prompt_len <= len(tokens):
        raise ProtocolViolation(f"prompt_len {prompt_len!r} out of range")
    if not isinstance(topk, int) or topk < 1:
        raise ProtocolViolation(f"topk must be a positive integer, got {topk!r}")
    for i, tok in enumerate(tokens):
        if tok is None:
            if i < prompt_len:
                raise ProtocolViolation(f"prompt slot {i} is null")
        elif not isinstance(tok, int) or isinstance(tok, bool) or tok < 0:
            raise ProtocolViolation(f"token at {i} must be null or a non-negative int")
    if not any(tok is None for tok in tokens[prompt_len:]):
        raise ProtocolViolation("protocol requires at least one masked slot")
    return Request(id=rid, tokens=tuple(tokens), prompt_len=prompt_len, topk=topk)


def make_entry(position, argmax_token, top1_prob, top1_logit, top2_logit, topk):
    # dict literal fixes the wire field order
    return {
        "position": int(position),
        "argmax_token": int(argmax_token),
        "top1_prob": float(top1_prob),
        "top1_logit": float(top1_logit),
        "top2_logit": float(top2_logit),
        "topk": [[int(t), float(p)] for t, p in topk],
    }


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def response_line(req_id, entries) -> str:
    return dumps({"id": req_id, "entries": entries})


def error_line(req_id, message) -> str:
    return dumps({"id": req_id, "error": str(message)})


def check_normalized(probs, tol=1e-4) -> None:
    """Guard for full-vocabulary distributions before they hit the wire."""
    total = float(sum(probs))
    if abs(total - 1.0) > tol:
        raise ProtocolViolation(f"distribution sums to {total}, not 1 within {tol}")
