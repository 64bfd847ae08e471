"""Embedding providers and cosine similarity.

Two providers are shipped: a deterministic hash-projection provider for
offline use and tests, and a remote HTTP provider speaking a one-text-in,
one-vector-out contract.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyText, ProviderFailure, ZeroVector

_TOKEN_RE = re.compile(r"[a-z0-9_]+")


@dataclass(frozen=True)
class Embedding:
    """A fixed-dimension real vector plus the tag of the model that made it."""

    vector: tuple[float, ...]
    model_tag: str

    @property
    def dim(self) -> int:
        return len(self.vector)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=np.float64)


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity a.b / (|a||b|) in float64.

    Raises:
        DimensionMismatch: unequal vector lengths.
        ZeroVector: either vector has zero norm.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"dim {a.dim} vs {b.dim}")
    va, vb = a.as_array(), b.as_array()
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero vector")
    return float(np.dot(va, vb) / (na * nb))


def _token_component(token: str, dim_index: int) -> float:
    """Deterministic pseudo-random component in [-1, 1] for (token, dim).

    Defined as: take the first 8 bytes of sha256(f"{token}|{dim_index}")
    as a big-endian unsigned integer u, return u / (2**64 - 1) * 2 - 1.
    Recomputable independently by tests.
    """
    digest = hashlib.sha256(f"{token}|{dim_index}".encode("utf-8")).digest()
    (u,) = struct.unpack(">Q", digest[:8])
    return u / float(2**64 - 1) * 2.0 - 1.0


class HashProjectionProvider:
    """Deterministic local embedder: token hash projections, L2-normalized.

    Tokens are lowercase runs of [a-z0-9_]. The text vector is the sum of
    per-token projection vectors, normalized to unit length. Texts with no
    tokens fall back to a single pseudo-token derived from the raw text so
    the invariant "no all-zero embedding" holds.
    """

    def __init__(self, dim: int = 64) -> None:
        self.dim = dim
        self.model_tag = f"hash-projection-{dim}"
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        cached = self._token_cache.get(token)
        if cached is None:
            cached = np.array(
                [_token_component(token, j) for j in range(self.dim)], dtype=np.float64
            )
            self._token_cache[token] = cached
        return cached

    def embed(self, text: str) -> Embedding:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            tokens = ["raw:" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]]
        acc = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            acc += self._token_vector(tok)
        norm = float(np.linalg.norm(acc))
        if norm == 0.0:
            # astronomically unlikely; perturb deterministically
            acc[0] = 1.0
            norm = 1.0
        return Embedding(vector=tuple(acc / norm), model_tag=self.model_tag)


class RemoteEmbeddingProvider:
    """HTTP embedder: POST {"text": ...} -> {"vector": [...]}.

    Dimension is read from the first reply and enforced afterwards.
    """

    def __init__(self, base_url: str, model_tag: str, api_key: str = "",
                 timeout: float = 30.0, retries: int = 3) -> None:
        self.base_url = base_url.rstrip("/")
        self.model_tag = model_tag
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.dim: int | None = None

    def embed(self, text: str) -> Embedding:
        import requests

        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(
                    f"{self.base_url}/embed",
                    json={"text": text, "model": self.model_tag},
                    headers=headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                vector = tuple(float(x) for x in resp.json()["vector"])
                if self.dim is None:
                    self.dim = len(vector)
                elif len(vector) != self.dim:
                    raise DimensionMismatch(
                        f"provider returned dim {len(vector)}, expected {self.dim}"
                    )
                return Embedding(vector=vector, model_tag=self.model_tag)
            except DimensionMismatch:
                raise
            except Exception as exc:  # transport or decode failure
                last_exc = exc
        raise ProviderFailure(f"embedding provider failed after {self.retries} attempts: {last_exc}")
