"""Append-only trace log covering every pipeline step of a request."""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path

PIPELINE_STEPS = (
    "decompose", "kg_match", "traverse", "rewrite", "vector_search",
    "fuse", "naive", "refine", "condense", "followup",
)

STEPS = PIPELINE_STEPS + ("judge",)


def digest(value: object) -> str:
    """Stable content digest of any JSON-serializable value."""
    payload = json.dumps(value, sort_keys=True, default=str, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def trace_id_for(session_id: str, turn_index: int, query: str) -> str:
    """Deterministic trace id so scripted replays are byte-reproducible."""
    return hashlib.sha256(f"{session_id}|{turn_index}|{query}".encode("utf-8")).hexdigest()[:16]


@dataclass
class TraceEvent:
    trace_id: str
    step: str
    input_digest: str
    output_digest: str
    duration_ms: float
    timestamp: float
    detail: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "trace_id": self.trace_id,
            "step": self.step,
            "input_digest": self.input_digest,
            "output_digest": self.output_digest,
            "duration_ms": self.duration_ms,
            "timestamp": self.timestamp,
        }
        if self.detail is not None:
            d["detail"] = self.detail
        return d


class TraceLog:
    """Thread-safe append-only event log, optionally file-backed (JSONL)."""

    def __init__(self, path: str | Path | None = None) -> None:
        self._path = Path(path) if path else None
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()
        if self._path and self._path.exists():
            with open(self._path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        d = json.loads(line)
                        self._events.append(TraceEvent(**d))

    def record(self, trace_id: str, step: str, input_value: object,
               output_value: object, duration_ms: float = 0.0,
               detail: dict | None = None) -> TraceEvent:
        if step not in STEPS:
            raise ValueError(f"unknown trace step: {step}")
        event = TraceEvent(
            trace_id=trace_id,
            step=step,
            input_digest=digest(input_value),
            output_digest=digest(output_value),
            duration_ms=duration_ms,
            timestamp=time.time(),
            detail=detail,
        )
        with self._lock:
            self._events.append(event)
            if self._path:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
        return event

    def events_for(self, trace_id: str) -> list[TraceEvent]:
        with self._lock:
            return [e for e in self._events if e.trace_id == trace_id]

    def known_trace(self, trace_id: str) -> bool:
        with self._lock:
            return any(e.trace_id == trace_id for e in self._events)
