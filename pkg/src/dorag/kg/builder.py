"""Four-agent extraction pipeline and graph merging.

Each chunk is run through four agents at different abstraction levels
(structure, domain entities, fine-grained behavior, attributes). Drafts
are merged into the graph with embedding-based deduplication gated on
equal entity type, and clusters of similar nodes gain synopsis nodes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum

from .. import prompts
from ..embed import Embedding, cosine
from ..errors import GatewayFailure, MalformedExtraction, MalformedReply
from ..gateway import Gateway, GatewayRequest
from ..ingest import Chunk, content_hash
from .store import (
    SELF_LOOP_TYPE,
    EntityNode,
    GraphStore,
    RelationEdge,
    edge_id_for,
    node_id_for,
)

logger = logging.getLogger(__name__)

DEFAULT_DEDUP_THRESHOLD = 0.90
DEFAULT_RELATION_CONFIDENCE = 0.5


class ExtractionAgentKind(str, Enum):
    HIGH_LEVEL = "high_level"
    MID_LEVEL = "mid_level"
    LOW_LEVEL = "low_level"
    COVARIATE = "covariate"


_TEMPLATE_FOR_KIND = {
    ExtractionAgentKind.HIGH_LEVEL: "extract_high.v1",
    ExtractionAgentKind.MID_LEVEL: "extract_mid.v1",
    ExtractionAgentKind.LOW_LEVEL: "extract_low.v1",
    ExtractionAgentKind.COVARIATE: "extract_covariate.v1",
}

_ALLOWED_TYPES_FOR_KIND = {
    ExtractionAgentKind.HIGH_LEVEL: {"structure"},
    ExtractionAgentKind.MID_LEVEL: {"component", "api", "parameter", "other"},
    ExtractionAgentKind.LOW_LEVEL: {"behavior", "error", "component", "api",
                                    "parameter", "other"},
    ExtractionAgentKind.COVARIATE: set(),
}


@dataclass
class EntityDraft:
    name: str
    entity_type: str
    description: str
    source_chunk_id: str


@dataclass
class RelationDraft:
    head_name: str
    tail_name: str
    relation_type: str
    description: str
    confidence: float
    source_chunk_id: str


@dataclass
class CovariateDraft:
    target_name: str
    attribute_key: str
    attribute_value: str
    source_chunk_id: str


@dataclass
class ExtractionResult:
    entities: list[EntityDraft] = field(default_factory=list)
    relations: list[RelationDraft] = field(default_factory=list)
    covariates: list[CovariateDraft] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not (self.entities or self.relations or self.covariates)


@dataclass
class MergeReport:
    new_nodes: int = 0
    merged_nodes: int = 0
    new_edges: int = 0


def run_agent(kind: ExtractionAgentKind, chunk: Chunk, gateway: Gateway,
              graph_context: str = "") -> ExtractionResult:
    """Run one extraction agent over one chunk.

    Raises:
        GatewayFailure: the LLM call failed after retries.
        MalformedExtraction: reply failed schema validation.
    """
    template_id = _TEMPLATE_FOR_KIND[kind]
    rendered = prompts.render(
        template_id,
        chunk=chunk.content,
        section_path=" > ".join(chunk.metadata.section_path) or "(top level)",
        graph_context=graph_context or "(none)",
    )
    req = GatewayRequest(
        template_id=template_id,
        rendered_prompt=rendered,
        expect="json_schema",
        schema_id="extraction",
        temperature=0.0,
    )
    try:
        payload = gateway.complete_json(req)
    except MalformedReply as exc:
        raise MalformedExtraction(str(exc)) from exc

    allowed = _ALLOWED_TYPES_FOR_KIND[kind]
    result = ExtractionResult()
    if kind is not ExtractionAgentKind.COVARIATE:
        for ent in payload.get("entities", []):
            entity_type = ent.get("entity_type", "other")
            if allowed and entity_type not in allowed:
                entity_type = "other"
            result.entities.append(EntityDraft(
                name=ent["name"].strip(),
                entity_type=entity_type,
                description=ent.get("description", "").strip(),
                source_chunk_id=chunk.chunk_id,
            ))
        for rel in payload.get("relations", []):
            result.relations.append(RelationDraft(
                head_name=rel["head_name"].strip(),
                tail_name=rel["tail_name"].strip(),
                relation_type=rel["relation_type"].strip(),
                description=rel.get("description", "").strip(),
                confidence=float(rel.get("confidence", DEFAULT_RELATION_CONFIDENCE)),
                source_chunk_id=chunk.chunk_id,
            ))
    for cov in payload.get("covariates", []):
        result.covariates.append(CovariateDraft(
            target_name=cov["target_name"].strip(),
            attribute_key=cov["attribute_key"].strip(),
            attribute_value=str(cov["attribute_value"]).strip(),
            source_chunk_id=chunk.chunk_id,
        ))
    return result


def _embed_draft(draft: EntityDraft, embedder) -> Embedding:
    text = draft.name if not draft.description else f"{draft.name}: {draft.description}"
    return embedder.embed(text)


def merge_result(result: ExtractionResult, graph: GraphStore, embedder,
                 dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD) -> MergeReport:
    """Merge drafts into the graph with dedup; total (never raises).

    A draft entity merges into an existing same-type node when the cosine
    between their embeddings reaches the threshold; otherwise it becomes a
    new node. Re-merging identical content is a no-op.
    """
    report = MergeReport()
    name_to_id: dict[tuple[str, str], str] = {}

    for draft in result.entities:
        emb = _embed_draft(draft, embedder)
        best_id, best_sim = None, -2.0
        for node in graph.nodes.values():
            if node.entity_type != draft.entity_type:
                continue
            sim = cosine(emb, node.embedding)
            if sim > best_sim or (sim == best_sim and (best_id is None or node.node_id < best_id)):
                best_id, best_sim = node.node_id, sim
        if best_id is not None and best_sim >= dedup_threshold:
            node = graph.nodes[best_id]
            changed = False
            if draft.description and draft.description not in node.description:
                node.description = (
                    f"{node.description}\n{draft.description}" if node.description
                    else draft.description
                )
                changed = True
            if draft.source_chunk_id not in node.provenance:
                node.provenance.append(draft.source_chunk_id)
                changed = True
            if changed:
                graph.upsert_node(node)
            report.merged_nodes += 1
            name_to_id[(draft.name.lower(), draft.entity_type)] = best_id
        else:
            node_id = node_id_for(draft.name, draft.entity_type)
            graph.upsert_node(EntityNode(
                node_id=node_id,
                name=draft.name,
                entity_type=draft.entity_type,
                description=draft.description,
                embedding=emb,
                provenance=[draft.source_chunk_id],
            ))
            report.new_nodes += 1
            name_to_id[(draft.name.lower(), draft.entity_type)] = node_id

    def resolve(name: str) -> str | None:
        lowered = name.lower()
        for (draft_name, _etype), node_id in name_to_id.items():
            if draft_name == lowered:
                return node_id
        candidates = [n for n in graph.nodes.values() if n.name.lower() == lowered]
        if candidates:
            return min(candidates, key=lambda n: n.node_id).node_id
        return None

    for rel in result.relations:
        head = resolve(rel.head_name)
        tail = resolve(rel.tail_name)
        if head is None or tail is None:
            logger.warning("dropping relation with unresolved endpoint: %s -> %s",
                           rel.head_name, rel.tail_name)
            continue
        if head == tail and rel.relation_type != SELF_LOOP_TYPE:
            continue
        confidence = min(1.0, max(0.0, rel.confidence))
        edge_id = edge_id_for(head, tail, rel.relation_type)
        existing = graph.edges.get(edge_id)
        if existing is None:
            graph.upsert_edge(RelationEdge(
                edge_id=edge_id,
                head=head,
                tail=tail,
                relation_type=rel.relation_type,
                description=rel.description,
                weight=confidence,
                provenance=[rel.source_chunk_id],
            ))
            report.new_edges += 1
        else:
            changed = False
            if confidence > existing.weight:
                existing.weight = confidence
                changed = True
            if rel.source_chunk_id not in existing.provenance:
                existing.provenance.append(rel.source_chunk_id)
                changed = True
            if changed:
                graph.upsert_edge(existing)

    for cov in result.covariates:
        target = resolve(cov.target_name)
        if target is None:
            logger.warning("dropping covariate for unknown target %s", cov.target_name)
            continue
        node = graph.nodes[target]
        changed = False
        if node.attributes.get(cov.attribute_key) != cov.attribute_value:
            node.attributes[cov.attribute_key] = cov.attribute_value
            changed = True
        if cov.source_chunk_id not in node.provenance:
            node.provenance.append(cov.source_chunk_id)
            changed = True
        if changed:
            graph.upsert_node(node)

    return report


def extract_chunk(chunk: Chunk, graph: GraphStore, gateway: Gateway, embedder,
                  dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD,
                  graph_context: str = "") -> MergeReport:
    """Run all four agents over a chunk and merge; one re-queue on a
    malformed reply per agent."""
    total = MergeReport()
    for kind in ExtractionAgentKind:
        result: ExtractionResult | None = None
        for attempt in range(2):
            try:
                result = run_agent(kind, chunk, gateway, graph_context)
                break
            except MalformedExtraction:
                if attempt == 1:
                    logger.error("agent %s failed twice on chunk %s; skipping",
                                 kind.value, chunk.chunk_id)
        if result is None:
            continue
        report = merge_result(result, graph, embedder, dedup_threshold)
        total.new_nodes += report.new_nodes
        total.merged_nodes += report.merged_nodes
        total.new_edges += report.new_edges
    return total


@dataclass
class SynopsisNode:
    node: EntityNode
    member_ids: list[str]


def similarity_clusters(graph: GraphStore, cluster_threshold: float,
                        min_cluster_size: int) -> list[list[str]]:
    """Single-link connected components of the same-type similarity graph,
    deterministic by node id; synopsis nodes themselves are excluded."""
    by_type: dict[str, list[EntityNode]] = {}
    for node_id in sorted(graph.nodes):
        node = graph.nodes[node_id]
        if node.entity_type == "synopsis":
            continue
        by_type.setdefault(node.entity_type, []).append(node)

    clusters: list[list[str]] = []
    for _etype, nodes in sorted(by_type.items()):
        parent = {n.node_id: n.node_id for n in nodes}

        def find(x: str) -> str:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, a in enumerate(nodes):
            for b in nodes[i + 1:]:
                if cosine(a.embedding, b.embedding) >= cluster_threshold:
                    ra, rb = find(a.node_id), find(b.node_id)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
        groups: dict[str, list[str]] = {}
        for n in nodes:
            groups.setdefault(find(n.node_id), []).append(n.node_id)
        for root in sorted(groups):
            members = sorted(groups[root])
            if len(members) >= min_cluster_size:
                clusters.append(members)
    return clusters


def synthesize_synopsis(graph: GraphStore, cluster_threshold: float = 0.9,
                        min_cluster_size: int = 3) -> list[SynopsisNode]:
    """Add one synopsis node per qualifying cluster; members are untouched.

    Idempotent: synopsis ids are content-derived, so re-running on an
    unchanged graph re-creates the same nodes and edges in place.
    """
    import numpy as np

    created: list[SynopsisNode] = []
    for members in similarity_clusters(graph, cluster_threshold, min_cluster_size):
        member_nodes = [graph.nodes[m] for m in members]
        vectors = np.stack([n.embedding.as_array() for n in member_nodes])
        centroid = vectors.mean(axis=0)
        norm = float(np.linalg.norm(centroid))
        if norm > 0:
            centroid = centroid / norm
        names = [n.name for n in member_nodes]
        synopsis_id = content_hash("synopsis", *members)
        provenance = sorted({cid for n in member_nodes for cid in n.provenance})
        node = EntityNode(
            node_id=synopsis_id,
            name="Synopsis: " + ", ".join(names[:5]) + ("…" if len(names) > 5 else ""),
            entity_type="synopsis",
            description="Groups " + str(len(members)) + " similar "
                        + member_nodes[0].entity_type + " entities: "
                        + ", ".join(names),
            embedding=Embedding(tuple(centroid), member_nodes[0].embedding.model_tag),
            attributes={"member_count": str(len(members))},
            provenance=provenance,
        )
        graph.upsert_node(node)
        for member in members:
            graph.upsert_edge(RelationEdge(
                edge_id=edge_id_for(synopsis_id, member, "summarizes"),
                head=synopsis_id,
                tail=member,
                relation_type="summarizes",
                weight=1.0,
                provenance=provenance,
            ))
        created.append(SynopsisNode(node=node, member_ids=members))
    return created
