"""Weighted knowledge graph store.

In-memory maps backed by a single append-log file (one JSON record per
node/edge write). Readers take a snapshot under the store lock, so a
traversal always sees one graph version.

Graph relevance of a retrieved subgraph is the decay-weighted mean of
seed similarities: each node contributes gamma**hop * seed_sim * mean
edge weight along its discovery path, normalized by the sum of the
gamma**hop coefficients, clamped to [0, 1].
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from ..embed import Embedding, cosine
from ..errors import DanglingEndpoint, EmptyGraph, UnknownSeed
from ..ingest import content_hash

ENTITY_TYPES = {
    "structure", "component", "api", "parameter", "behavior", "error",
    "synopsis", "other",
}

SELF_LOOP_TYPE = "self_loop_attribute"


@dataclass
class EntityNode:
    node_id: str
    name: str
    entity_type: str
    description: str
    embedding: Embedding
    attributes: dict[str, str] = field(default_factory=dict)
    provenance: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "name": self.name,
            "entity_type": self.entity_type,
            "description": self.description,
            "embedding": list(self.embedding.vector),
            "model_tag": self.embedding.model_tag,
            "attributes": dict(self.attributes),
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntityNode":
        return cls(
            node_id=d["node_id"],
            name=d["name"],
            entity_type=d["entity_type"],
            description=d.get("description", ""),
            embedding=Embedding(tuple(d["embedding"]), d.get("model_tag", "")),
            attributes=dict(d.get("attributes", {})),
            provenance=list(d.get("provenance", [])),
        )


@dataclass
class RelationEdge:
    edge_id: str
    head: str
    tail: str
    relation_type: str
    description: str = ""
    weight: float = 0.5
    provenance: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "edge_id": self.edge_id,
            "head": self.head,
            "tail": self.tail,
            "relation_type": self.relation_type,
            "description": self.description,
            "weight": self.weight,
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RelationEdge":
        return cls(
            edge_id=d["edge_id"],
            head=d["head"],
            tail=d["tail"],
            relation_type=d["relation_type"],
            description=d.get("description", ""),
            weight=float(d.get("weight", 0.5)),
            provenance=list(d.get("provenance", [])),
        )


@dataclass
class Subgraph:
    nodes: list[EntityNode] = field(default_factory=list)
    edges: list[RelationEdge] = field(default_factory=list)
    seed_similarities: dict[str, float] = field(default_factory=dict)
    hop_of: dict[str, int] = field(default_factory=dict)
    # discovery bookkeeping for the relevance score
    origin_sim: dict[str, float] = field(default_factory=dict)
    path_weight: dict[str, float] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    def node_ids(self) -> set[str]:
        return {n.node_id for n in self.nodes}


def node_id_for(name: str, entity_type: str) -> str:
    return content_hash("node", name, entity_type)


def edge_id_for(head: str, tail: str, relation_type: str) -> str:
    return content_hash("edge", head, tail, relation_type)


class GraphStore:
    """Single-writer, many-reader weighted graph with append-log persistence."""

    def __init__(self, log_path: str | Path | None = None) -> None:
        self.nodes: dict[str, EntityNode] = {}
        self.edges: dict[str, RelationEdge] = {}
        self._adjacency: dict[str, list[str]] = {}
        self._lock = threading.RLock()
        self._log_path = Path(log_path) if log_path else None
        if self._log_path and self._log_path.exists():
            self._replay_log()

    # --- persistence ------------------------------------------------------

    def _replay_log(self) -> None:
        with open(self._log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                kind = record.pop("kind")
                if kind == "node":
                    self._put_node(EntityNode.from_dict(record), log=False)
                elif kind == "edge":
                    self._put_edge(RelationEdge.from_dict(record), log=False)

    def _append_log(self, kind: str, payload: dict) -> None:
        if self._log_path is None:
            return
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"kind": kind, **payload}, sort_keys=True) + "\n")

    def export_jsonl(self, path: str | Path) -> None:
        with self._lock, open(path, "w", encoding="utf-8") as fh:
            for node_id in sorted(self.nodes):
                fh.write(json.dumps({"kind": "node", **self.nodes[node_id].to_dict()},
                                    sort_keys=True) + "\n")
            for edge_id in sorted(self.edges):
                fh.write(json.dumps({"kind": "edge", **self.edges[edge_id].to_dict()},
                                    sort_keys=True) + "\n")

    @classmethod
    def import_jsonl(cls, path: str | Path, log_path: str | Path | None = None) -> "GraphStore":
        store = cls(log_path=log_path)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                kind = record.pop("kind")
                if kind == "node":
                    store.upsert_node(EntityNode.from_dict(record))
                elif kind == "edge":
                    store.upsert_edge(RelationEdge.from_dict(record))
        return store

    # --- writes -----------------------------------------------------------

    def _put_node(self, node: EntityNode, log: bool = True) -> None:
        changed = self.nodes.get(node.node_id) != node
        self.nodes[node.node_id] = node
        self._adjacency.setdefault(node.node_id, [])
        if changed and log:
            self._append_log("node", node.to_dict())

    def _put_edge(self, edge: RelationEdge, log: bool = True) -> None:
        changed = self.edges.get(edge.edge_id) != edge
        if edge.edge_id not in self.edges:
            self._adjacency.setdefault(edge.head, []).append(edge.edge_id)
            if edge.tail != edge.head:
                self._adjacency.setdefault(edge.tail, []).append(edge.edge_id)
        self.edges[edge.edge_id] = edge
        if changed and log:
            self._append_log("edge", edge.to_dict())

    def upsert_node(self, node: EntityNode) -> str:
        with self._lock:
            self._put_node(node)
            return node.node_id

    def upsert_edge(self, edge: RelationEdge) -> str:
        with self._lock:
            if edge.head not in self.nodes:
                raise DanglingEndpoint(f"unknown head {edge.head}")
            if edge.tail not in self.nodes:
                raise DanglingEndpoint(f"unknown tail {edge.tail}")
            if edge.head == edge.tail and edge.relation_type != SELF_LOOP_TYPE:
                raise ValueError("self-loop only allowed for self_loop_attribute")
            if not 0.0 <= edge.weight <= 1.0:
                raise ValueError(f"edge weight {edge.weight} outside [0,1]")
            self._put_edge(edge)
            return edge.edge_id

    # --- reads ------------------------------------------------------------

    def node_count(self) -> int:
        return len(self.nodes)

    def edge_count(self) -> int:
        return len(self.edges)

    def synopsis_count(self) -> int:
        return sum(1 for n in self.nodes.values() if n.entity_type == "synopsis")

    def match_entities(self, query_embedding: Embedding, k: int) -> list[tuple[str, float]]:
        """Top-k nodes by cosine to the query; ties by node_id ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock:
            if not self.nodes:
                raise EmptyGraph("no nodes")
            scored = [
                (node_id, cosine(query_embedding, node.embedding))
                for node_id, node in self.nodes.items()
            ]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]

    def traverse(self, seeds: list[str], max_hops: int = 2,
                 min_edge_weight: float = 0.2, max_nodes: int = 64,
                 seed_similarities: dict[str, float] | None = None) -> Subgraph:
        """Breadth-first expansion from seeds over edges of sufficient weight.

        Both edge directions are followed. When the node budget is hit,
        lower-hop nodes are kept first, then higher discovery similarity,
        then node_id.
        """
        seed_similarities = seed_similarities or {}
        with self._lock:
            for seed in seeds:
                if seed not in self.nodes:
                    raise UnknownSeed(seed)
            sub = Subgraph()
            hop_of: dict[str, int] = {}
            origin_sim: dict[str, float] = {}
            path_weight_sum: dict[str, float] = {}
            path_len: dict[str, int] = {}
            discovered_edges: list[str] = []

            # seeds ordered by similarity desc then id for deterministic BFS
            ordered_seeds = sorted(
                dict.fromkeys(seeds),
                key=lambda s: (-seed_similarities.get(s, 0.0), s),
            )
            queue: deque[str] = deque()
            for seed in ordered_seeds:
                hop_of[seed] = 0
                origin_sim[seed] = seed_similarities.get(seed, 0.0)
                path_weight_sum[seed] = 0.0
                path_len[seed] = 0
                queue.append(seed)

            while queue:
                current = queue.popleft()
                if hop_of[current] >= max_hops:
                    continue
                neighbors: list[tuple[str, RelationEdge]] = []
                for edge_id in self._adjacency.get(current, []):
                    edge = self.edges[edge_id]
                    if edge.weight < min_edge_weight:
                        continue
                    other = edge.tail if edge.head == current else edge.head
                    neighbors.append((other, edge))
                neighbors.sort(key=lambda pair: (pair[0], pair[1].edge_id))
                for other, edge in neighbors:
                    if edge.edge_id not in discovered_edges and other in hop_of:
                        # connects two visited nodes; keep the edge for context
                        discovered_edges.append(edge.edge_id)
                    if other in hop_of:
                        continue
                    hop_of[other] = hop_of[current] + 1
                    origin_sim[other] = origin_sim[current]
                    path_weight_sum[other] = path_weight_sum[current] + edge.weight
                    path_len[other] = path_len[current] + 1
                    if edge.edge_id not in discovered_edges:
                        discovered_edges.append(edge.edge_id)
                    queue.append(other)

            kept = sorted(
                hop_of,
                key=lambda nid: (hop_of[nid], -origin_sim[nid], nid),
            )[:max_nodes]
            kept_set = set(kept)
            sub.nodes = [self.nodes[nid] for nid in kept]
            sub.edges = [
                self.edges[eid] for eid in discovered_edges
                if self.edges[eid].head in kept_set and self.edges[eid].tail in kept_set
            ]
            sub.hop_of = {nid: hop_of[nid] for nid in kept}
            sub.origin_sim = {nid: origin_sim[nid] for nid in kept}
            sub.path_weight = {
                nid: (path_weight_sum[nid] / path_len[nid]) if path_len[nid] else 1.0
                for nid in kept
            }
            sub.seed_similarities = {
                nid: seed_similarities.get(nid, 0.0)
                for nid in kept if hop_of[nid] == 0
            }
            return sub


def graph_relevance(sub: Subgraph, gamma: float = 0.5) -> float:
    """Decay-weighted mean of seed similarities over the subgraph; 0 when empty."""
    if sub.is_empty:
        return 0.0
    numerator = 0.0
    denominator = 0.0
    for node in sub.nodes:
        nid = node.node_id
        coeff = gamma ** sub.hop_of.get(nid, 0)
        sim = sub.origin_sim.get(nid, sub.seed_similarities.get(nid, 0.0))
        numerator += coeff * sim * sub.path_weight.get(nid, 1.0)
        denominator += coeff
    if denominator == 0.0:
        return 0.0
    return min(1.0, max(0.0, numerator / denominator))
