"""Prediction backends.

A backend answers one question: given a token sequence with mask ids at
some positions, what are the top-k token probabilities at the queried
positions? ``StubBackend`` answers deterministically without any model and
exists for protocol conformance testing; ``CheckpointBackend`` wraps a real
mask-predicting checkpoint behind the same interface.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

_SEED_SUFFIX = re.compile(r"#(\d+)$")


@dataclass(frozen=True)
class PositionDistribution:
    tokens: tuple[int, ...]
    probs: tuple[float, ...]
    tail_mass: float


def _top_k_from_dense(dense: Sequence[float], top_k: int) -> PositionDistribution:
    order = sorted(range(len(dense)), key=lambda t: (-dense[t], t))[:top_k]
    probs = [float(dense[t]) for t in order]
    tail = max(0.0, 1.0 - sum(probs))
    return PositionDistribution(tuple(order), tuple(probs), tail)


class StubBackend:
    """Deterministic distributions, a pure function of the request.

    Plain request ids get the uniform distribution over the configured
    vocabulary. Ids ending in ``#<integer>`` get a pseudo-random simplex
    derived from that integer and the queried position, so tests can ask
    for varied yet reproducible shapes.

    Tokenization is a fixed byte mapping: UTF-8 bytes modulo (vocab - 1),
    which never emits the mask id (the last vocabulary id).
    """

    def __init__(self, vocab_size: int = 16):
        if vocab_size < 2:
            raise ValueError("stub vocabulary needs at least two ids")
        self.vocab_size = vocab_size
        self.mask_id = vocab_size - 1

    def _dense(self, request_id: str, position: int) -> list[float]:
        match = _SEED_SUFFIX.search(request_id)
        if match is None:
            return [1.0 / self.vocab_size] * self.vocab_size
        digest = hashlib.sha256(f"{match.group(1)}:{position}".encode()).digest()
        raw = [
            1.0 + int.from_bytes(digest[(2 * i) % 30 : (2 * i) % 30 + 2], "big")
            for i in range(self.vocab_size)
        ]
        total = sum(raw)
        return [value / total for value in raw]

    def forward(
        self,
        prompt: Sequence[int],
        gen: Sequence[int],
        mask_id: int,
        positions: Sequence[int],
        top_k: int,
        request_id: str,
    ) -> dict[int, PositionDistribution]:
        k = min(top_k, self.vocab_size)
        return {
            pos: _top_k_from_dense(self._dense(request_id, pos), k) for pos in positions
        }

    def tokenize(self, text: str) -> list[int]:
        return [b % (self.vocab_size - 1) for b in text.encode("utf-8")]


class CheckpointBackend:
    """A real mask-predicting checkpoint behind the backend interface.

    Loads lazily via ``transformers``; every request is one full forward
    pass in inference mode (no caching of partial sequences). Forward
    passes are serialized by the caller.
    """

    def __init__(self, checkpoint: str, device: Optional[str] = None):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "checkpoint backend needs the torch and transformers extras installed"
            ) from exc
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(checkpoint, trust_remote_code=True)
        self.model = AutoModel.from_pretrained(checkpoint, trust_remote_code=True)
        if device:
            self.model = self.model.to(device)
        self.model.eval()
        self.device = device or "cpu"
        mask_id = self.tokenizer.mask_token_id
        if mask_id is None:
            raise RuntimeError(f"tokenizer of {checkpoint} does not define a mask token")
        self.mask_id = int(mask_id)
        self.vocab_size = int(self.model.config.vocab_size)

    def mask_forward(
        self, tokens: Sequence[int], positions: Sequence[int], top_k: int
    ) -> dict[int, PositionDistribution]:
        """Softmax of the model outputs at the requested (absolute) positions,
        truncated to top_k with the remainder reported as tail mass."""
        if not positions:
            return {}
        torch = self._torch
        with torch.inference_mode():
            input_ids = torch.tensor([list(tokens)], dtype=torch.long, device=self.device)
            logits = self.model(input_ids).logits[0]
            out = {}
            for pos in positions:
                dense = torch.softmax(logits[pos].to(torch.float64), dim=-1)
                k = min(top_k, dense.shape[-1])
                values, indices = torch.topk(dense, k)
                probs = [float(v) for v in values]
                tail = max(0.0, 1.0 - math.fsum(probs))
                out[pos] = PositionDistribution(
                    tuple(int(i) for i in indices), tuple(probs), tail
                )
        return out

    def forward(
        self,
        prompt: Sequence[int],
        gen: Sequence[int],
        mask_id: int,
        positions: Sequence[int],
        top_k: int,
        request_id: str,
    ) -> dict[int, PositionDistribution]:
        tokens = list(prompt) + list(gen)
        offset = len(prompt)
        absolute = [offset + pos for pos in positions]
        predicted = self.mask_forward(tokens, absolute, top_k)
        return {pos - offset: dist for pos, dist in predicted.items()}

    def tokenize(self, text: str) -> list[int]:
        return [int(t) for t in self.tokenizer(text, add_special_tokens=False)["input_ids"]]
