"""Staged grounded answer generation: naive draft, evidence-checked
refinement, condensation, citation resolution, abstention, follow-ups.

Citation markers are evidence-list indexes assigned at prompt render time;
the model is instructed to cite by index, and any marker that does not
resolve to an evidence chunk is stripped before the envelope is built.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field

from . import prompts
from .chunkstore import ChunkStore
from .errors import GatewayFailure
from .gateway import Gateway, GatewayRequest
from .ingest import Chunk
from .retrieval import RetrievalBundle, render_graph_facts, render_history
from .trace import TraceLog

ABSTAIN_TEXT = "I do not know."
MAX_FOLLOWUPS = 3

_MARKER_RE = re.compile(r"\[(\d+)\]")


@dataclass
class Citation:
    marker: int
    chunk_id: str
    doc_id: str
    section_path: list[str] = field(default_factory=list)
    page: int | None = None
    doc_title: str = ""

    def to_dict(self) -> dict:
        return {
            "marker": self.marker,
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "section_path": list(self.section_path),
            "page": self.page,
            "doc_title": self.doc_title,
        }


@dataclass
class StagePrompt:
    stage: str  # naive, refine, condense, followup
    template_id: str
    rendered: str


@dataclass
class AnswerEnvelope:
    naive: str
    refined: str
    condensed: str
    citations: list[Citation] = field(default_factory=list)
    followups: list[str] = field(default_factory=list)
    abstained: bool = False
    trace_id: str = ""
    fusion: dict | None = None
    stage_prompts: list[StagePrompt] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "naive": self.naive,
            "refined": self.refined,
            "condensed": self.condensed,
            "citations": [c.to_dict() for c in self.citations],
            "followups": list(self.followups),
            "abstained": self.abstained,
            "trace_id": self.trace_id,
            "fusion": self.fusion,
        }


def extract_markers(text: str) -> set[int]:
    return {int(m) for m in _MARKER_RE.findall(text)}


def strip_invalid_markers(text: str, valid: set[int]) -> str:
    return _MARKER_RE.sub(
        lambda m: m.group(0) if int(m.group(1)) in valid else "", text)


def render_evidence(chunks: list[Chunk]) -> str:
    if not chunks:
        return "(none)"
    lines = []
    for i, chunk in enumerate(chunks, start=1):
        lines.append(f"[{i}] {chunk.content}")
    return "\n\n".join(lines)


class Generator:
    def __init__(self, gateway: Gateway, chunks: ChunkStore,
                 trace_log: TraceLog | None = None) -> None:
        self.gateway = gateway
        self.chunks = chunks
        self.trace_log = trace_log or TraceLog()

    # --- stages -----------------------------------------------------------

    def _complete(self, stage: str, template_id: str, collector: list[StagePrompt],
                  **values: str) -> str:
        rendered = prompts.render(template_id, **values)
        collector.append(StagePrompt(stage=stage, template_id=template_id,
                                     rendered=rendered))
        req = GatewayRequest(
            template_id=template_id, rendered_prompt=rendered, temperature=0.2)
        return self.gateway.complete(req).strip()

    def generate_naive(self, bundle: RetrievalBundle, query: str,
                       evidence: list[Chunk], history: list[dict],
                       collector: list[StagePrompt]) -> str:
        return self._complete(
            "naive", "naive.v1", collector,
            query=query,
            graph_facts=render_graph_facts(bundle.subgraph),
            chunks=render_evidence(evidence),
            history=render_history(history),
        )

    def refine(self, naive: str, bundle: RetrievalBundle, query: str,
               evidence: list[Chunk],
               collector: list[StagePrompt]) -> str:
        """Cross-check the draft against the full evidence; on gateway
        failure the draft passes through unchanged."""
        try:
            refined = self._complete(
                "refine", "refine.v1", collector,
                query=query,
                graph_facts=render_graph_facts(bundle.subgraph),
                chunks=render_evidence(evidence),
                naive_answer=naive,
            )
        except GatewayFailure:
            return naive
        return refined or naive

    def condense(self, refined: str, original_query: str,
                 collector: list[StagePrompt]) -> str:
        """Condensation must preserve the marker set; one retry, then the
        refined text stands."""
        expected = extract_markers(refined)
        for _attempt in range(2):
            try:
                condensed = self._complete(
                    "condense", "condense.v1", collector,
                    query=original_query, refined_answer=refined)
            except GatewayFailure:
                return refined
            if condensed and extract_markers(condensed) == expected:
                return condensed
        return refined

    def generate_followups(self, condensed: str, query: str, history: list[dict],
                           collector: list[StagePrompt]) -> list[str]:
        rendered = prompts.render(
            "followup.v1", query=query, refined_answer=condensed,
            history=render_history(history))
        collector.append(StagePrompt(stage="followup", template_id="followup.v1",
                                     rendered=rendered))
        req = GatewayRequest(
            template_id="followup.v1", rendered_prompt=rendered,
            expect="json_schema", schema_id="followups", temperature=0.2)
        try:
            payload = self.gateway.complete_json(req)
        except Exception:
            return []
        questions = [q.strip() for q in payload.get("questions", [])
                     if q.strip() and q.strip() != query]
        return questions[:MAX_FOLLOWUPS]

    # --- envelope ---------------------------------------------------------

    def _abstain(self, trace_id: str, fusion: dict | None,
                 collector: list[StagePrompt]) -> AnswerEnvelope:
        return AnswerEnvelope(
            naive=ABSTAIN_TEXT,
            refined=ABSTAIN_TEXT,
            condensed=ABSTAIN_TEXT,
            citations=[],
            followups=[],
            abstained=True,
            trace_id=trace_id,
            fusion=fusion,
            stage_prompts=collector,
        )

    def answer(self, bundle: RetrievalBundle, query: str,
               history: list[dict] | None = None) -> AnswerEnvelope:
        """Run the staged chain; abstention is the error sink."""
        history = history or []
        trace_id = bundle.trace_id
        fusion = bundle.fusion.to_dict()
        collector: list[StagePrompt] = []

        def record(step: str, input_value, output_value, started: float) -> None:
            if trace_id:
                self.trace_log.record(
                    trace_id, step, input_value, output_value,
                    duration_ms=(time.monotonic() - started) * 1000.0)

        evidence = [c for c in (self.chunks.get(cid) for cid, _ in bundle.chunk_hits)
                    if c is not None]
        if not evidence and bundle.subgraph.is_empty:
            envelope = self._abstain(trace_id, fusion, collector)
            for step in ("naive", "refine", "condense", "followup"):
                record(step, query, ABSTAIN_TEXT, time.monotonic())
            return envelope

        t0 = time.monotonic()
        try:
            naive = self.generate_naive(bundle, query, evidence, history, collector)
        except GatewayFailure:
            envelope = self._abstain(trace_id, fusion, collector)
            for step in ("naive", "refine", "condense", "followup"):
                record(step, query, ABSTAIN_TEXT, t0)
            return envelope
        record("naive", query, naive, t0)

        if naive == ABSTAIN_TEXT:
            # the model, instructed to abstain on insufficient evidence, did so
            envelope = self._abstain(trace_id, fusion, collector)
            for step in ("refine", "condense", "followup"):
                record(step, naive, ABSTAIN_TEXT, time.monotonic())
            return envelope

        t0 = time.monotonic()
        refined = self.refine(naive, bundle, query, evidence, collector)
        record("refine", naive, refined, t0)

        t0 = time.monotonic()
        condensed = self.condense(refined, query, collector)
        record("condense", refined, condensed, t0)

        valid = set(range(1, len(evidence) + 1))
        condensed = strip_invalid_markers(condensed, valid)
        markers = sorted(extract_markers(condensed))
        citations = []
        for marker in markers:
            chunk = evidence[marker - 1]
            page = chunk.metadata.page_range[0] if chunk.metadata.page_range else None
            citations.append(Citation(
                marker=marker,
                chunk_id=chunk.chunk_id,
                doc_id=chunk.doc_id,
                section_path=list(chunk.metadata.section_path),
                page=page,
                doc_title=self.chunks.doc_title(chunk.doc_id),
            ))

        t0 = time.monotonic()
        followups = self.generate_followups(condensed, query, history, collector)
        record("followup", condensed, followups, t0)

        return AnswerEnvelope(
            naive=naive,
            refined=refined,
            condensed=condensed,
            citations=citations,
            followups=followups,
            abstained=False,
            trace_id=trace_id,
            fusion=fusion,
            stage_prompts=collector,
        )
