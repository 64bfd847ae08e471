"""Pipeline wiring: configuration, file-backed stores, ingest queue,
KG building, and multi-turn question answering.

Everything persists under one data directory:
  chunks.jsonl   chunk store + document registry
  index.bin      vector index
  graph.jsonl    knowledge graph append log
  queue.jsonl    chunk ids awaiting KG extraction
  sessions.jsonl chat turn log
  traces.jsonl   trace events
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .chunkstore import ChunkStore
from .embed import HashProjectionProvider, RemoteEmbeddingProvider
from .errors import DoragError, EmptyDocument, Unanswerable
from .evalkit import SuiteResult, run_suite
from .gateway import FailingProvider, Gateway, HttpProvider, MockProvider, Transcript
from .generation import AnswerEnvelope, Generator
from .index import VectorIndex
from .ingest import Chunk, ChunkPolicy, chunk_document, content_hash, parse_document
from .kg.builder import extract_chunk, synthesize_synopsis
from .kg.store import GraphStore
from .retrieval import RetrievalBundle, RetrievalConfig, Retriever
from .trace import TraceLog, trace_id_for


class DuplicateDocument(DoragError):
    def __init__(self, doc_id: str) -> None:
        super().__init__(f"document already ingested: {doc_id}")
        self.doc_id = doc_id


@dataclass
class AppConfig:
    data_dir: str = "./dorag-data"
    provider: str = "mock"           # mock | http | none
    model: str = ""
    api_base: str = ""
    api_key: str = ""
    transcript: str = ""             # path to a scripted transcript (mock)
    embed_provider: str = "hash"     # hash | http
    embed_dim: int = 64
    embed_api_base: str = ""
    embed_model: str = ""
    target_chars: int = 1600
    overlap_chars: int = 200
    dedup_threshold: float = 0.90
    cluster_threshold: float = 0.90
    min_cluster_size: int = 3
    alpha: float = 0.5
    k_chunks: int = 8
    k_seed: int = 5
    max_hops: int = 2
    min_edge_weight: float = 0.2
    gamma: float = 0.5

    def retrieval_config(self) -> RetrievalConfig:
        return RetrievalConfig(
            alpha=self.alpha, k_chunks=self.k_chunks, k_seed=self.k_seed,
            max_hops=self.max_hops, min_edge_weight=self.min_edge_weight,
            gamma=self.gamma,
        )


_ENV_PREFIX = "DORAG_"


def load_config(path: str | Path | None = None,
                env: dict[str, str] | None = None) -> AppConfig:
    """Key/value config file plus DORAG_* environment overrides."""
    env = env if env is not None else dict(os.environ)
    values: dict[str, str] = {}
    if path:
        for raw_line in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip().strip('"')
    for f in fields(AppConfig):
        env_key = _ENV_PREFIX + f.name.upper()
        if env_key in env:
            values[f.name] = env[env_key]
    config = AppConfig()
    for f in fields(AppConfig):
        if f.name not in values:
            continue
        raw = values[f.name]
        if f.type in ("int",):
            setattr(config, f.name, int(raw))
        elif f.type in ("float",):
            setattr(config, f.name, float(raw))
        else:
            setattr(config, f.name, raw)
    return config


def build_gateway(config: AppConfig) -> Gateway:
    if config.provider == "mock":
        transcript = (Transcript.load(config.transcript) if config.transcript
                      else Transcript(strict=False))
        return Gateway(MockProvider(transcript))
    if config.provider == "http":
        return Gateway(HttpProvider(config.api_base, config.model, config.api_key))
    if config.provider == "none":
        return Gateway(FailingProvider(), retries=1)
    raise ValueError(f"unknown provider: {config.provider}")


def build_embedder(config: AppConfig):
    if config.embed_provider == "hash":
        return HashProjectionProvider(dim=config.embed_dim)
    if config.embed_provider == "http":
        return RemoteEmbeddingProvider(config.embed_api_base, config.embed_model,
                                       config.api_key)
    raise ValueError(f"unknown embed provider: {config.embed_provider}")


class Pipeline:
    """One deployment: stores, gateway, retriever, generator, sessions."""

    def __init__(self, config: AppConfig, gateway: Gateway | None = None,
                 embedder=None) -> None:
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.gateway = gateway or build_gateway(config)
        self.embedder = embedder or build_embedder(config)

        self.chunks = ChunkStore(self.data_dir / "chunks.jsonl")
        index_path = self.data_dir / "index.bin"
        if index_path.exists():
            self.index = VectorIndex.load(index_path)
        else:
            dim = getattr(self.embedder, "dim", None)
            if dim is None:
                dim = self.embedder.embed("dimension probe").dim
            self.index = VectorIndex(dim=dim, model_tag=self.embedder.model_tag)
        self.graph = GraphStore(self.data_dir / "graph.jsonl")
        self.trace_log = TraceLog(self.data_dir / "traces.jsonl")
        self.retriever = Retriever(self.graph, self.index, self.chunks,
                                   self.embedder, self.gateway, self.trace_log)
        self.generator = Generator(self.gateway, self.chunks, self.trace_log)

        self._queue_path = self.data_dir / "queue.jsonl"
        self._sessions_path = self.data_dir / "sessions.jsonl"
        self._sessions: dict[str, list[dict]] = {}
        self._session_lock = threading.Lock()
        if self._sessions_path.exists():
            with open(self._sessions_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        turn = json.loads(line)
                        self._sessions.setdefault(turn["session_id"], []).append(turn)

    # --- ingest -----------------------------------------------------------

    def _save_index(self) -> None:
        self.index.save(self.data_dir / "index.bin")

    def _enqueue(self, chunk_ids: list[str]) -> None:
        with open(self._queue_path, "a", encoding="utf-8") as fh:
            for chunk_id in chunk_ids:
                fh.write(json.dumps({"chunk_id": chunk_id}) + "\n")

    def pending_extraction(self) -> list[str]:
        if not self._queue_path.exists():
            return []
        pending = []
        with open(self._queue_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    pending.append(json.loads(line)["chunk_id"])
        return pending

    def ingest_bytes(self, raw: bytes, format_hint: str = "markdown",
                     origin_uri: str = "") -> dict:
        """Parse, chunk, index, and enqueue for extraction; idempotent per
        content hash.

        Raises:
            DuplicateDocument: same bytes ingested before.
            UndecodableInput / EmptyDocument: from parsing.
        """
        doc_id = content_hash("doc", raw)
        if self.chunks.has_doc(doc_id):
            raise DuplicateDocument(doc_id)
        doc = parse_document(raw, format_hint, origin_uri=origin_uri, doc_id=doc_id)
        policy = ChunkPolicy(target_chars=self.config.target_chars,
                             overlap_chars=self.config.overlap_chars)
        chunk_list = chunk_document(doc, policy)
        self.chunks.register_doc(doc.doc_id, doc.title, origin_uri)
        for chunk in chunk_list:
            self.chunks.add(chunk)
            self.index.add(chunk.chunk_id, self.embedder.embed(chunk.content))
        self._save_index()
        self._enqueue([c.chunk_id for c in chunk_list])
        return {
            "doc_id": doc.doc_id,
            "title": doc.title,
            "chunk_count": len(chunk_list),
            "kg_delta": {"queued": len(chunk_list)},
        }

    def ingest_path(self, path: str | Path) -> dict:
        path = Path(path)
        hint = {".md": "markdown", ".markdown": "markdown",
                ".html": "html", ".htm": "html"}.get(path.suffix.lower(), "plain")
        return self.ingest_bytes(path.read_bytes(), hint, origin_uri=str(path))

    # --- KG build ---------------------------------------------------------

    def build_kg(self) -> dict:
        """Drain the extraction queue through all four agents, then refresh
        synopsis nodes."""
        pending = self.pending_extraction()
        totals = {"chunks": 0, "new_nodes": 0, "merged_nodes": 0, "new_edges": 0}
        for chunk_id in pending:
            chunk = self.chunks.get(chunk_id)
            if chunk is None:
                continue
            report = extract_chunk(chunk, self.graph, self.gateway, self.embedder,
                                   dedup_threshold=self.config.dedup_threshold)
            totals["chunks"] += 1
            totals["new_nodes"] += report.new_nodes
            totals["merged_nodes"] += report.merged_nodes
            totals["new_edges"] += report.new_edges
        if self._queue_path.exists():
            self._queue_path.write_text("", encoding="utf-8")
        synopses = synthesize_synopsis(
            self.graph,
            cluster_threshold=self.config.cluster_threshold,
            min_cluster_size=self.config.min_cluster_size,
        ) if self.graph.node_count() else []
        totals["synopsis_nodes"] = len(synopses)
        return totals

    # --- chat -------------------------------------------------------------

    def _append_turn(self, session_id: str, role: str, text: str,
                     envelope_ref: str | None = None) -> None:
        turn = {"session_id": session_id, "role": role, "text": text,
                "envelope_ref": envelope_ref, "ts": time.time()}
        self._sessions.setdefault(session_id, []).append(turn)
        with open(self._sessions_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(turn, sort_keys=True) + "\n")

    def session_history(self, session_id: str) -> list[dict]:
        return list(self._sessions.get(session_id, []))

    def ask(self, query: str, session_id: str = "",
            config: RetrievalConfig | None = None
            ) -> tuple[AnswerEnvelope, RetrievalBundle]:
        """Answer one turn; raises Unanswerable when both stores are empty."""
        if not query.strip():
            raise ValueError("empty query")
        config = config or self.config.retrieval_config()
        with self._session_lock:
            history = self.session_history(session_id) if session_id else []
            turn_index = sum(1 for t in history if t["role"] == "user")
            trace_id = trace_id_for(session_id, turn_index, query)
            bundle = self.retriever.build_bundle(
                query, history=history, config=config, trace_id=trace_id)
            envelope = self.generator.answer(bundle, query, history=history)
            if session_id:
                self._append_turn(session_id, "user", query)
                self._append_turn(session_id, "assistant", envelope.condensed,
                                  envelope_ref=trace_id)
        return envelope, bundle

    # --- eval / stats -----------------------------------------------------

    def chunk_text(self, chunk_id: str) -> str:
        chunk = self.chunks.get(chunk_id)
        return chunk.content if chunk else ""

    def run_eval(self, dataset) -> SuiteResult:
        return run_suite(dataset, self, self.gateway, self.embedder,
                         trace_log=self.trace_log)

    def stats(self) -> dict:
        return {
            "documents": len({c.doc_id for c in self.chunks.all_chunks()}),
            "chunks": len(self.chunks),
            "nodes": self.graph.node_count(),
            "edges": self.graph.edge_count(),
            "synopsis_count": self.graph.synopsis_count(),
            "pending_extraction": len(self.pending_extraction()),
        }
