"""Hybrid retrieval: query decomposition, graph traversal, graph-aware
rewriting, vector search, and fusion of the two relevance signals.

The fusion score is value = alpha * max_chunk_sim + (1 - alpha) *
graph_relevance; the scalar is recorded for tracing while the scored
context bundle feeds generation.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

from . import prompts
from .chunkstore import ChunkStore
from .embed import Embedding
from .errors import AlphaOutOfRange, EmptyGraph, GatewayFailure, Unanswerable
from .gateway import Gateway, GatewayRequest
from .index import VectorIndex
from .kg.store import GraphStore, Subgraph, graph_relevance
from .trace import TraceLog


@dataclass
class SubQuery:
    text: str
    intent_label: str = ""


@dataclass
class QueryDecomposition:
    original: str
    sub_queries: list[SubQuery]


@dataclass
class FusionScore:
    alpha: float
    max_chunk_sim: float
    graph_relevance: float
    value: float

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "max_chunk_sim": self.max_chunk_sim,
            "graph_relevance": self.graph_relevance,
            "value": self.value,
        }


@dataclass
class RetrievalBundle:
    decomposition: QueryDecomposition
    subgraph: Subgraph
    rewritten_query: str
    chunk_hits: list[tuple[str, float]]
    fusion: FusionScore
    history_snippet: list[dict] = field(default_factory=list)
    trace_id: str = ""

    @property
    def has_evidence(self) -> bool:
        return bool(self.chunk_hits) or not self.subgraph.is_empty


@dataclass
class RetrievalConfig:
    alpha: float = 0.5
    k_chunks: int = 8
    k_seed: int = 5
    max_hops: int = 2
    min_edge_weight: float = 0.2
    max_nodes: int = 64
    gamma: float = 0.5
    history_turns: int = 4


def fuse(alpha: float, chunk_hits: list[tuple[str, float]],
         subgraph_relevance: float) -> FusionScore:
    """Combine best chunk similarity with graph relevance."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha {alpha} outside [0,1]")
    max_chunk_sim = max((sim for _cid, sim in chunk_hits), default=0.0)
    value = alpha * max_chunk_sim + (1.0 - alpha) * subgraph_relevance
    return FusionScore(
        alpha=alpha,
        max_chunk_sim=max_chunk_sim,
        graph_relevance=subgraph_relevance,
        value=value,
    )


def render_history(history: list[dict], limit: int = 4) -> str:
    """Last `limit` turns verbatim, one per line."""
    turns = history[-limit:] if limit else []
    if not turns:
        return "(no prior turns)"
    return "\n".join(f"{t.get('role', 'user')}: {t.get('text', '')}" for t in turns)


def render_graph_facts(sub: Subgraph) -> str:
    if sub.is_empty:
        return "(none)"
    lines: list[str] = []
    name_of = {n.node_id: n.name for n in sub.nodes}
    for node in sub.nodes:
        attrs = "; ".join(f"{k}={v}" for k, v in sorted(node.attributes.items()))
        line = f"- {node.name} [{node.entity_type}]"
        if node.description:
            line += f": {node.description.splitlines()[0]}"
        if attrs:
            line += f" ({attrs})"
        lines.append(line)
    for edge in sub.edges:
        lines.append(
            f"- {name_of.get(edge.head, edge.head)} --{edge.relation_type}--> "
            f"{name_of.get(edge.tail, edge.tail)} (w={edge.weight:g})"
        )
    return "\n".join(lines)


class Retriever:
    """Stateless per request; safe for concurrent use over snapshot reads."""

    def __init__(self, graph: GraphStore, index: VectorIndex, chunks: ChunkStore,
                 embedder, gateway: Gateway, trace_log: TraceLog | None = None) -> None:
        self.graph = graph
        self.index = index
        self.chunks = chunks
        self.embedder = embedder
        self.gateway = gateway
        self.trace_log = trace_log or TraceLog()

    def decompose(self, query: str, history: list[dict] | None = None) -> QueryDecomposition:
        """LLM intent split; degrades to the original as a single sub-query."""
        if not query.strip():
            raise ValueError("empty query")
        history = history or []
        req = GatewayRequest(
            template_id="decompose.v1",
            rendered_prompt=prompts.render(
                "decompose.v1", query=query, history=render_history(history)),
            expect="json_schema",
            schema_id="decomposition",
        )
        try:
            payload = self.gateway.complete_json(req)
            subs = [
                SubQuery(text=s["text"], intent_label=s.get("intent_label", ""))
                for s in payload["sub_queries"] if s["text"].strip()
            ]
        except Exception:
            subs = []
        if not subs:
            subs = [SubQuery(text=query)]
        return QueryDecomposition(original=query, sub_queries=subs)

    def retrieve_graph_context(self, decomp: QueryDecomposition,
                               config: RetrievalConfig) -> Subgraph:
        """Union of seeded traversals over all sub-queries; min hop wins."""
        union = Subgraph()
        if self.graph.node_count() == 0:
            return union
        best: dict[str, tuple[int, float, float]] = {}  # node_id -> (hop, origin, pathw)
        nodes: dict[str, object] = {}
        edges: dict[str, object] = {}
        seed_sims: dict[str, float] = {}
        for sub_query in decomp.sub_queries:
            embedding = self.embedder.embed(sub_query.text)
            try:
                seeds = self.graph.match_entities(embedding, config.k_seed)
            except EmptyGraph:
                continue
            sims = {nid: sim for nid, sim in seeds}
            sub = self.graph.traverse(
                [nid for nid, _ in seeds],
                max_hops=config.max_hops,
                min_edge_weight=config.min_edge_weight,
                max_nodes=config.max_nodes,
                seed_similarities=sims,
            )
            for node in sub.nodes:
                nid = node.node_id
                entry = (sub.hop_of[nid], sub.origin_sim.get(nid, 0.0),
                         sub.path_weight.get(nid, 1.0))
                if nid not in best or entry[0] < best[nid][0] or (
                        entry[0] == best[nid][0] and entry[1] > best[nid][1]):
                    best[nid] = entry
                nodes[nid] = node
            for edge in sub.edges:
                edges[edge.edge_id] = edge
            for nid, sim in sub.seed_similarities.items():
                seed_sims[nid] = max(seed_sims.get(nid, 0.0), sim)
        union.nodes = [nodes[nid] for nid in sorted(nodes)]
        union.edges = [edges[eid] for eid in sorted(edges)]
        union.hop_of = {nid: best[nid][0] for nid in nodes}
        union.origin_sim = {nid: best[nid][1] for nid in nodes}
        union.path_weight = {nid: best[nid][2] for nid in nodes}
        union.seed_similarities = {
            nid: sim for nid, sim in seed_sims.items() if union.hop_of.get(nid) == 0
        }
        return union

    def rewrite_query(self, original: str, subgraph: Subgraph) -> str:
        """Graph-aware disambiguation; empty subgraph or failure -> original."""
        if subgraph.is_empty:
            return original
        req = GatewayRequest(
            template_id="rewrite.v1",
            rendered_prompt=prompts.render(
                "rewrite.v1", query=original,
                graph_facts=render_graph_facts(subgraph)),
        )
        try:
            rewritten = self.gateway.complete(req).strip()
        except GatewayFailure:
            return original
        return rewritten or original

    def build_bundle(self, query: str, history: list[dict] | None = None,
                     config: RetrievalConfig | None = None,
                     trace_id: str = "") -> RetrievalBundle:
        """Full retrieval chain with every intermediate traced.

        Raises:
            Unanswerable: both the graph and the index are empty.
        """
        config = config or RetrievalConfig()
        history = history or []
        if self.graph.node_count() == 0 and len(self.index) == 0:
            raise Unanswerable("both retrieval stores are empty")

        def record(step: str, input_value, output_value, started: float,
                   detail: dict | None = None) -> None:
            if trace_id:
                self.trace_log.record(
                    trace_id, step, input_value, output_value,
                    duration_ms=(time.monotonic() - started) * 1000.0,
                    detail=detail,
                )

        t0 = time.monotonic()
        decomp = self.decompose(query, history)
        record("decompose", query,
               [s.text for s in decomp.sub_queries], t0)

        t0 = time.monotonic()
        subgraph = self.retrieve_graph_context(decomp, config)
        record("kg_match", [s.text for s in decomp.sub_queries],
               sorted(subgraph.seed_similarities), t0)
        record("traverse", sorted(subgraph.seed_similarities),
               sorted(subgraph.node_ids()), t0)

        t0 = time.monotonic()
        rewritten = self.rewrite_query(query, subgraph)
        record("rewrite", query, rewritten, t0)

        t0 = time.monotonic()
        chunk_hits: list[tuple[str, float]] = []
        if len(self.index) > 0:
            embedding = self.embedder.embed(rewritten)
            chunk_hits = self.index.search(embedding, config.k_chunks)
        record("vector_search", rewritten, [cid for cid, _ in chunk_hits], t0)

        t0 = time.monotonic()
        relevance = graph_relevance(subgraph, gamma=config.gamma)
        fusion = fuse(config.alpha, chunk_hits, relevance)
        record("fuse",
               {"alpha": config.alpha, "max_chunk_sim": fusion.max_chunk_sim,
                "graph_relevance": relevance},
               fusion.value, t0, detail=fusion.to_dict())

        return RetrievalBundle(
            decomposition=decomp,
            subgraph=subgraph,
            rewritten_query=rewritten,
            chunk_hits=chunk_hits,
            fusion=fusion,
            history_snippet=history[-config.history_turns:],
            trace_id=trace_id,
        )
