"""File-backed chunk store: one JSONL record per chunk, plus doc metadata."""

from __future__ import annotations

import json
import threading
from pathlib import Path

from .ingest import Chunk


class ChunkStore:
    def __init__(self, path: str | Path | None = None) -> None:
        self._path = Path(path) if path else None
        self._chunks: dict[str, Chunk] = {}
        self._by_doc: dict[str, list[str]] = {}
        self._docs: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self._path and self._path.exists():
            with open(self._path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    if record.get("kind") == "doc":
                        self._docs[record["doc_id"]] = record
                    else:
                        self._insert(Chunk.from_dict(record), log=False)

    def __len__(self) -> int:
        return len(self._chunks)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._chunks

    def _insert(self, chunk: Chunk, log: bool = True) -> None:
        new = chunk.chunk_id not in self._chunks
        self._chunks[chunk.chunk_id] = chunk
        if new:
            self._by_doc.setdefault(chunk.doc_id, []).append(chunk.chunk_id)
        if new and log and self._path:
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(chunk.to_dict(), sort_keys=True) + "\n")

    def add(self, chunk: Chunk) -> None:
        with self._lock:
            self._insert(chunk)

    def register_doc(self, doc_id: str, title: str, origin_uri: str = "") -> None:
        with self._lock:
            record = {"kind": "doc", "doc_id": doc_id, "title": title,
                      "origin_uri": origin_uri}
            new = doc_id not in self._docs
            self._docs[doc_id] = record
            if new and self._path:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")

    def get(self, chunk_id: str) -> Chunk | None:
        return self._chunks.get(chunk_id)

    def doc_title(self, doc_id: str) -> str:
        record = self._docs.get(doc_id)
        return record.get("title", "") if record else ""

    def has_doc(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def chunks_for_doc(self, doc_id: str) -> list[Chunk]:
        return [self._chunks[cid] for cid in self._by_doc.get(doc_id, [])]

    def all_chunks(self) -> list[Chunk]:
        return list(self._chunks.values())
