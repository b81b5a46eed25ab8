"""Model servers for the JSONL mask-prediction wire protocol."""

from .mock import ReplayModel, UniformModel
from .protocol import (
    ProtocolViolation,
    Request,
    check_normalized,
    error_line,
    make_entry,
    parse_line,
    response_line,
    validate_request,
)
from .server import serve_loop

__version__ = "0.1.0"

__all__ = [
    "ProtocolViolation",
    "ReplayModel",
    "Request",
    "UniformModel",
    "check_normalized",
    "error_line",
    "make_entry",
    "parse_line",
    "response_line",
    "serve_loop",
    "validate_request",
    "__version__",
]
