"""Prompt-text embedding backends.

``hash`` is the deterministic offline default: character n-grams are
feature-hashed into a fixed-width vector and unit-normalized, so
identical prompts map to identical vectors and texts sharing wording
land closer than unrelated ones. ``clip:<model-id>`` wraps a pretrained
text encoder and needs torch + transformers plus downloadable weights.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .formats import ExtractError


class HashEmbedder:
    """Signed n-gram feature hashing; no model, fully deterministic."""

    name = "hash"

    def __init__(self, dim: int = 64, ngram: int = 3):
        if dim < 2:
            raise ExtractError("hash embedder dim must be >= 2")
        self.dim = dim
        self.ngram = ngram

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            padded = f" {' '.join(text.lower().split())} "
            for i in range(max(1, len(padded) - self.ngram + 1)):
                token = padded[i:i + self.ngram].encode("utf-8")
                digest = hashlib.blake2b(token, digest_size=8).digest()
                bucket = int.from_bytes(digest[:4], "little") % self.dim
                sign = 1.0 if digest[4] & 1 else -1.0
                out[row, bucket] += sign
            norm = np.linalg.norm(out[row])
            if norm == 0.0:
                raise ExtractError(f"prompt row {row}: degenerate embedding")
            out[row] /= norm
        return out


class ClipTextEmbedder:
    """Pretrained text encoder via transformers (lazy; needs weights)."""

    def __init__(self, model_id: str, device: str = "cpu"):
        self.name = f"clip:{model_id}"
        self.model_id = model_id
        self.device = device
        self._model = None
        self._tokenizer = None

    def _load(self):
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from transformers import CLIPTextModelWithProjection, CLIPTokenizer
        except ImportError as exc:
            raise ExtractError(
                f"backend {self.name!r} needs torch and transformers: {exc}"
            ) from None
        try:
            self._tokenizer = CLIPTokenizer.from_pretrained(self.model_id)
            self._model = CLIPTextModelWithProjection.from_pretrained(
                self.model_id
            ).to(self.device).eval()
        except Exception as exc:
            raise ExtractError(
                f"backend {self.name!r}: model unavailable ({exc})"
            ) from None

    @property
    def dim(self) -> int:
        self._load()
        return int(self._model.config.projection_dim)

    def embed(self, texts: list[str]) -> np.ndarray:
        self._load()
        import torch

        with torch.no_grad():
            tokens = self._tokenizer(texts, padding=True, truncation=True,
                                     return_tensors="pt").to(self.device)
            feats = self._model(**tokens).text_embeds.cpu().double().numpy()
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        return feats / norms


def get_embedder(spec: str, dim: int = 64):
    if spec == "hash":
        return HashEmbedder(dim=dim)
    if spec.startswith("clip:"):
        return ClipTextEmbedder(spec.split(":", 1)[1])
    raise ExtractError(f"unknown embed backend {spec!r} (use 'hash' or 'clip:<model-id>')")


def embed_prompts(prompts: list[tuple[int, str]], embedder) -> list[tuple[int, np.ndarray]]:
    """One unit-normalized vector per prompt, in input order."""
    if not prompts:
        return []
    vectors = embedder.embed([text for _, text in prompts])
    return [(pid, vectors[i]) for i, (pid, _) in enumerate(prompts)]
