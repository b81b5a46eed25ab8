"""Client side of the stdio JSONL predictor protocol.

``WirePredictor`` spawns a server process and turns each ``predict`` call
into one request/response round trip, so the engine can drive a model that
lives outside this interpreter without knowing it is remote.  Requests are
serial: at most one is in flight, ids increase by one per call, and the
server is expected to answer in order.
"""

from __future__ import annotations

import json
import subprocess
from typing import IO, Sequence

from .core import MASK, SequenceState, dumps_json
from .predictor import TOPK_CAP, MaskPredictor, PredictorError
from .core import PositionPrediction, PredictionGrid


def encode_request(state: SequenceState, req_id: int, topk: int) -> str:
    """Serialize one request line.  Masked response slots become null."""
    tokens: list[object] = list(state.prompt)
    for tok in state.response:
        tokens.append(None if tok == MASK else tok)
    return dumps_json(
        {"id": req_id, "tokens": tokens, "prompt_len": state.prompt_len, "topk": topk}
    )


def decode_response(line: str, state: SequenceState, req_id: int) -> PredictionGrid:
    """Parse one response line into a grid, enforcing the protocol invariants.

    Entry positions on the wire are absolute indices into the request's token
    array; grid positions are response-relative, so the prompt length is
    subtracted here.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise PredictorError(f"unparseable response line: {exc}") from None
    if not isinstance(obj, dict):
        raise PredictorError("response is not a JSON object")
    if "error" in obj:
        raise PredictorError(f"server error for id={obj.get('id')}: {obj['error']}")
    if obj.get("id") != req_id:
        raise PredictorError(f"response id {obj.get('id')!r} != request id {req_id}")

    expected = {state.prompt_len + p for p in state.masked_positions()}
    entries = []
    seen: set[int] = set()
    for raw in obj.get("entries", ()):
        try:
            abs_pos = int(raw["position"])
            pred = PositionPrediction(
                position=abs_pos - state.prompt_len,
                argmax_token=int(raw["argmax_token"]),
                top1_prob=float(raw["top1_prob"]),
                top1_logit=float(raw["top1_logit"]),
                top2_logit=float(raw["top2_logit"]),
                topk=tuple((int(t), float(p)) for t, p in raw["topk"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PredictorError(f"malformed entry in response id={req_id}: {exc}") from None
        if abs_pos not in expected:
            raise PredictorError(f"entry for non-masked position {abs_pos}")
        if abs_pos in seen:
            raise PredictorError(f"duplicate entry for position {abs_pos}")
        seen.add(abs_pos)
        entries.append(pred)
    if seen != expected:
        missing = sorted(expected - seen)
        raise PredictorError(f"entries do not cover masked positions; missing {missing}")
    entries.sort(key=lambda e: e.position)
    return PredictionGrid(entries=tuple(entries))


def round_trip(
    writer: IO[str], reader: IO[str], state: SequenceState, req_id: int, topk: int
) -> PredictionGrid:
    """One request/response exchange over already-open text streams."""
    if not state.masked_positions():
        raise PredictorError("protocol requires at least one masked slot")
    writer.write(encode_request(state, req_id, topk) + "\n")
    writer.flush()
    while True:
        line = reader.readline()
        if line == "":
            raise PredictorError("server closed the stream mid-request")
        if line.strip() == "":
            continue  # blank lines are ignored by contract
        return decode_response(line, state, req_id)


class WirePredictor(MaskPredictor):
    """Mask predictor backed by a subprocess speaking the JSONL protocol."""

    def __init__(self, command: Sequence[str], topk: int = TOPK_CAP) -> None:
        if topk < 2:
            raise PredictorError("topk must be at least 2 (top-2 logits are required)")
        self._topk = topk
        self._next_id = 0
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def predict(self, state: SequenceState) -> PredictionGrid:
        proc = self._proc
        if proc.poll() is not None:
            raise PredictorError(f"server exited with status {proc.returncode}")
        assert proc.stdin is not None and proc.stdout is not None
        req_id = self._next_id
        self._next_id += 1
        try:
            return round_trip(proc.stdin, proc.stdout, state, req_id, self._topk)
        except BrokenPipeError:
            raise PredictorError("server pipe broke mid-request") from None

    def close(self) -> None:
        proc = self._proc
        if proc.stdin is not None and not proc.stdin.closed:
            try:
                proc.stdin.close()
            except BrokenPipeError:
                pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "WirePredictor":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()
