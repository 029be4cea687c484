"""Deterministic feature-hashing text embedder producing unit vectors.

The encoder is a drop-in stand-in for a neural sentence encoder: same
interface (text in, fixed-dimension unit vector out), but bit-exact across
runs and platforms, so index builds and similarity scores are reproducible.
A real model can be plugged in through the Embedder protocol.
"""

from __future__ import annotations

import json
import urllib.request
from typing import Protocol, runtime_checkable

import numpy as np

from .tokens import tokenize

DEFAULT_DIM = 256

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class EmptyText(ValueError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@runtime_checkable
class Embedder(Protocol):
    """Anything that turns text into a fixed-dimension unit vector."""

    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Feature hashing over lowercased tokens.

    Each token lands at FNV-1a-64(token) mod dim with sign taken from bit 63
    of the hash; the accumulated vector is L2-normalized. Order-invariant by
    construction (bag of tokens).
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._token_cache: dict[str, tuple[int, float]] = {}

    def _slot(self, token: str) -> tuple[int, float]:
        hit = self._token_cache.get(token)
        if hit is None:
            h = fnv1a_64(token.encode("utf-8"))
            hit = (h % self.dim, 1.0 if (h >> 63) == 0 else -1.0)
            self._token_cache[token] = hit
        return hit

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise EmptyText("cannot embed text with no tokens")
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            idx, sign = self._slot(token)
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # Signs cancelled exactly; nudge via a deterministic fallback slot
            # so the result is still a unit vector.
            idx, sign = self._slot(tokens[0] + "\x00")
            vec[idx] += sign
            norm = 1.0
        return vec / norm


class HttpEmbedder:
    """External embedder spoken to over HTTP: POST {"text": ...} -> {"vector": [...]}."""

    def __init__(self, url: str, dim: int = DEFAULT_DIM, timeout: float = 10.0):
        self.url = url
        self.dim = dim
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        if not tokenize(text):
            raise EmptyText("cannot embed text with no tokens")
        body = json.dumps({"text": text}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        vec = np.asarray(payload["vector"], dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"embedder returned shape {vec.shape}, expected ({self.dim},)")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError("embedder returned a zero vector")
        return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors (plain dot product)."""
    return float(np.dot(a, b))
