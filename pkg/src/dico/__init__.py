"""Divide-and-conquer parallel decoding for masked-diffusion models.

The package splits into a model-agnostic controller (divide/conquer/finalize
phases plus baseline decoders), an exact tabular Markov oracle used as a
stand-in model, a theorem checker for the product-vs-joint factorization
bound, and a stdio wire client for driving out-of-process predictors.
"""

from .core import (
    MASK,
    NON_AR,
    SEMI_AR,
    DecodeConfig,
    DecodeError,
    IntegrityError,
    InvalidArgument,
    InvalidState,
    PositionPrediction,
    PredictionGrid,
    SequenceState,
    Trace,
    TraceEvent,
    new_sequence,
    trace_from_jsonl,
    trace_to_jsonl,
    unmask_ratio,
)
from .engine import (
    DecodeMetrics,
    DecodeResult,
    compute_metrics,
    decode_dico,
    decode_fixed_threshold,
    decode_semi_ar,
    decode_topk,
    decode_vanilla,
)
from .predictor import (
    MarkovOracle,
    MaskPredictor,
    PredictorError,
    exact_conditional_marginals,
    random_oracle,
)
from .remote import WirePredictor
from .theory import TheoremVerification, analyze_oracle, verify_theorem

__version__ = "0.1.0"

__all__ = [
    "MASK",
    "NON_AR",
    "SEMI_AR",
    "DecodeConfig",
    "DecodeError",
    "DecodeMetrics",
    "DecodeResult",
    "IntegrityError",
    "InvalidArgument",
    "InvalidState",
    "MarkovOracle",
    "MaskPredictor",
    "PositionPrediction",
    "PredictionGrid",
    "PredictorError",
    "SequenceState",
    "TheoremVerification",
    "Trace",
    "TraceEvent",
    "WirePredictor",
    "analyze_oracle",
    "compute_metrics",
    "decode_dico",
    "decode_fixed_threshold",
    "decode_semi_ar",
    "decode_topk",
    "decode_vanilla",
    "exact_conditional_marginals",
    "new_sequence",
    "random_oracle",
    "trace_from_jsonl",
    "trace_to_jsonl",
    "unmask_ratio",
    "verify_theorem",
    "__version__",
]
