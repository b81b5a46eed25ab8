"""The serve loop shared by every backend.

Strictly serial: read a line, answer it, flush, repeat.  A blank line is
skipped.  Any protocol violation (unparseable JSON included) becomes an
error object on the same stream and the loop keeps going; only stream
closure ends it.  Responses therefore match requests one-to-one in order.
"""

from __future__ import annotations

from .protocol import (
    ProtocolViolation,
    error_line,
    parse_line,
    response_line,
    validate_request,
)


def serve_loop(model, reader, writer) -> int:
    answered = 0
    for raw in reader:
        line = raw.strip()
        if not line:
            continue
        rid = None
        try:
            rid, obj = parse_line(line)
            req = validate_request(obj)
            out = response_line(req.id, model.entries(req))
        except ProtocolViolation as exc:
            out = error_line(rid, exc)
        writer.write(out + "\n")
        writer.flush()
        answered += 1
    return answered
