"""Exact top-k vector index over chunk embeddings.

Linear scan with full sort; adequate at desk scale and trivially exact.
Persistence: a JSON header line followed by little-endian float64 rows,
so a reloaded index returns bit-identical similarities.
"""

from __future__ import annotations

import json
import struct
import threading
from pathlib import Path

import numpy as np

from .embed import Embedding
from .errors import DimensionMismatch, EmptyIndex, ZeroVector


class VectorIndex:
    """One entry per chunk_id; cosine search with ties broken by chunk_id."""

    def __init__(self, dim: int, model_tag: str) -> None:
        self.dim = dim
        self.model_tag = model_tag
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self._pos: dict[str, int] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._pos

    def add(self, chunk_id: str, embedding: Embedding) -> None:
        if embedding.dim != self.dim:
            raise DimensionMismatch(f"index dim {self.dim}, got {embedding.dim}")
        row = embedding.as_array()
        norm = float(np.linalg.norm(row))
        if norm == 0.0:
            raise ZeroVector(f"all-zero embedding rejected for {chunk_id}")
        with self._lock:
            if chunk_id in self._pos:
                self._rows[self._pos[chunk_id]] = row / norm
            else:
                self._pos[chunk_id] = len(self._ids)
                self._ids.append(chunk_id)
                self._rows.append(row / norm)

    def remove(self, chunk_id: str) -> None:
        with self._lock:
            pos = self._pos.pop(chunk_id, None)
            if pos is None:
                return
            self._ids.pop(pos)
            self._rows.pop(pos)
            for cid, p in list(self._pos.items()):
                if p > pos:
                    self._pos[cid] = p - 1

    def search(self, query: Embedding, k: int) -> list[tuple[str, float]]:
        """Exact top-k by cosine, descending; ties by chunk_id ascending."""
        if not self._ids:
            raise EmptyIndex("no entries")
        if k < 1:
            raise ValueError("k must be >= 1")
        if query.dim != self.dim:
            raise DimensionMismatch(f"index dim {self.dim}, got {query.dim}")
        q = query.as_array()
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise ZeroVector("all-zero query")
        q = q / qn
        sims = np.stack(self._rows) @ q
        order = sorted(range(len(self._ids)), key=lambda i: (-sims[i], self._ids[i]))
        return [(self._ids[i], float(sims[i])) for i in order[:k]]

    # --- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = json.dumps(
            {"d": self.dim, "model_tag": self.model_tag, "count": len(self._ids),
             "ids": self._ids}
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for row in self._rows:
                fh.write(row.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        path = Path(path)
        with open(path, "rb") as fh:
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            idx = cls(dim=header["d"], model_tag=header["model_tag"])
            for chunk_id in header["ids"]:
                row = np.frombuffer(fh.read(8 * idx.dim), dtype="<f8").copy()
                idx._pos[chunk_id] = len(idx._ids)
                idx._ids.append(chunk_id)
                idx._rows.append(row)
        return idx
