"""Real-model backend: one bidirectional forward pass per request.

Works with any hub checkpoint that exposes token logits and a mask token
(masked-LM heads, masked-diffusion LMs with remote code).  Null slots are
filled with the mask token id, the whole sequence goes through the model
once, and each null position's logit row becomes one response entry.

Heavy imports stay inside ``load_model`` so the mock paths never pay for
them.  Note: tabular-oracle confidences are exact probabilities while
real-model softmax scores are not calibrated the same way, so controller
thresholds tuned on oracles (the logit-margin cut especially) may need
retuning against a particular checkpoint.
"""

from __future__ import annotations

import sys

from .protocol import ProtocolViolation, Request, check_normalized, make_entry


def load_model(identifier: str):
    """Import the backend and load tokenizer+model; exceptions bubble up."""
    import torch  # noqa: F401  (presence check before any download)
    from transformers import AutoModelForMaskedLM, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(identifier)
    model = AutoModelForMaskedLM.from_pretrained(identifier)
    model.eval()
    if tokenizer.mask_token_id is None:
        raise ValueError(f"model {identifier!r} has no mask token")
    return tokenizer, model


class RealModel:
    def __init__(self, tokenizer, model, topk_cap: int):
        self.tokenizer = tokenizer
        self.model = model
        self.topk_cap = topk_cap

    def entries(self, req: Request) -> list[dict]:
        import torch

        mask_id = self.tokenizer.mask_token_id
        ids = [mask_id if tok is None else tok for tok in req.tokens]
        with torch.no_grad():
            logits = self.model(torch.tensor([ids])).logits[0]
        out = []
        for pos in req.null_positions():
            row = logits[pos]
            probs = torch.softmax(row, dim=-1)
            check_normalized(probs.tolist())
            order = torch.argsort(row, descending=True, stable=True)
            k = min(req.topk, self.topk_cap, len(order))
            top = [(int(t), float(probs[t])) for t in order[:k]]
            if len(order) < 2:
                raise ProtocolViolation("model vocabulary is degenerate")
            out.append(
                make_entry(
                    pos, int(order[0]), float(probs[order[0]]),
                    float(row[order[0]]), float(row[order[1]]), top,
                )
            )
        return out


def build(identifier: str, topk_cap: int) -> RealModel:
    try:
        tokenizer, model = load_model(identifier)
    except Exception as exc:
        print(f"error: cannot load model {identifier!r}: {exc}", file=sys.stderr)
        raise SystemExit(1)
    return RealModel(tokenizer, model, topk_cap)
