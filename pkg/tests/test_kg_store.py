"""Graph store: upserts, matching, traversal, relevance, persistence."""

import numpy as np
import pytest

from dorag.embed import Embedding
from dorag.errors import DanglingEndpoint, EmptyGraph, UnknownSeed
from dorag.kg.store import (
    EntityNode,
    GraphStore,
    RelationEdge,
    Subgraph,
    edge_id_for,
    graph_relevance,
    node_id_for,
)


def vec(*values):
    return Embedding(tuple(float(v) for v in values), "test")


def node(nid, vector, etype="component", name=None):
    return EntityNode(
        node_id=nid, name=name or nid, entity_type=etype,
        description="", embedding=vec(*vector), provenance=["chunk0"],
    )


def edge(head, tail, weight=1.0, rtype="rel"):
    return RelationEdge(
        edge_id=edge_id_for(head, tail, rtype), head=head, tail=tail,
        relation_type=rtype, weight=weight, provenance=["chunk0"],
    )


@pytest.fixture
def path_graph():
    """A - B - C with configurable middle edge weight."""
    g = GraphStore()
    g.upsert_node(node("A", [1, 0, 0]))
    g.upsert_node(node("B", [0, 1, 0]))
    g.upsert_node(node("C", [0, 0, 1]))
    g.upsert_edge(edge("A", "B", weight=0.9))
    g.upsert_edge(edge("B", "C", weight=0.8))
    return g


class TestUpsert:
    def test_idempotent_node(self):
        g = GraphStore()
        n = node("A", [1, 0, 0])
        assert g.upsert_node(n) == g.upsert_node(n)
        assert g.node_count() == 1

    def test_dangling_edge(self):
        g = GraphStore()
        g.upsert_node(node("A", [1, 0, 0]))
        with pytest.raises(DanglingEndpoint):
            g.upsert_edge(edge("A", "missing"))

    def test_self_loop_restricted(self):
        g = GraphStore()
        g.upsert_node(node("A", [1, 0, 0]))
        with pytest.raises(ValueError):
            g.upsert_edge(edge("A", "A"))
        g.upsert_edge(edge("A", "A", rtype="self_loop_attribute"))

    def test_weight_bounds(self):
        g = GraphStore()
        g.upsert_node(node("A", [1, 0, 0]))
        g.upsert_node(node("B", [0, 1, 0]))
        with pytest.raises(ValueError):
            g.upsert_edge(edge("A", "B", weight=1.5))

    def test_provenance_round_trip(self, tmp_path):
        n = node("A", [0.5, 0.25, -1.0])
        n.provenance = ["c1", "c2", "c3"]
        g = GraphStore(tmp_path / "g.jsonl")
        g.upsert_node(n)
        reloaded = GraphStore(tmp_path / "g.jsonl")
        assert reloaded.nodes["A"] == n


class TestMatch:
    def test_identity_match(self, path_graph):
        hits = path_graph.match_entities(vec(0, 1, 0), k=1)
        assert hits[0][0] == "B"
        assert hits[0][1] == pytest.approx(1.0, abs=1e-12)

    def test_k_saturation(self, path_graph):
        assert len(path_graph.match_entities(vec(1, 1, 1), k=99)) == 3

    def test_empty_graph(self):
        with pytest.raises(EmptyGraph):
            GraphStore().match_entities(vec(1, 0, 0), k=1)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        g = GraphStore()
        vectors = {}
        for i in range(5):
            v = rng.normal(size=4)
            vectors[f"n{i}"] = v
            g.upsert_node(node(f"n{i}", v))
        query = rng.normal(size=4)
        got = g.match_entities(vec(*query), k=5)
        qn = query / np.linalg.norm(query)
        expected = sorted(
            ((nid, float(np.dot(v / np.linalg.norm(v), qn)))
             for nid, v in vectors.items()),
            key=lambda pair: (-pair[1], pair[0]),
        )
        assert [nid for nid, _ in got] == [nid for nid, _ in expected]
        for (_, sa), (_, sb) in zip(got, expected):
            assert sa == pytest.approx(sb, abs=1e-12)


class TestTraverse:
    def test_zero_hops(self, path_graph):
        sub = path_graph.traverse(["A"], max_hops=0)
        assert sub.node_ids() == {"A"}
        assert sub.edges == []
        assert sub.hop_of == {"A": 0}

    def test_two_hops_path(self, path_graph):
        sub = path_graph.traverse(["A"], max_hops=2, min_edge_weight=0.0)
        assert sub.node_ids() == {"A", "B", "C"}
        assert sub.hop_of == {"A": 0, "B": 1, "C": 2}

    def test_weight_filter_blocks(self, path_graph):
        sub = path_graph.traverse(["A"], max_hops=2, min_edge_weight=0.95)
        assert sub.node_ids() == {"A"}

    def test_unknown_seed(self, path_graph):
        with pytest.raises(UnknownSeed):
            path_graph.traverse(["nope"])

    def test_max_nodes_prefers_low_hops(self, path_graph):
        sub = path_graph.traverse(["A"], max_hops=2, min_edge_weight=0.0, max_nodes=2)
        assert sub.node_ids() == {"A", "B"}

    def test_subgraph_subset_of_store(self, path_graph):
        sub = path_graph.traverse(["A", "C"], max_hops=1, min_edge_weight=0.0)
        for n in sub.nodes:
            assert n.node_id in path_graph.nodes
        for e in sub.edges:
            assert e.edge_id in path_graph.edges
            assert e.head in sub.node_ids() and e.tail in sub.node_ids()

    def test_bfs_oracle_random_graphs(self):
        # independent BFS with weight filter over 30 random graphs
        rng = np.random.default_rng(42)
        for _trial in range(30):
            g = GraphStore()
            n = int(rng.integers(2, 20))
            for i in range(n):
                g.upsert_node(node(f"n{i:02d}", rng.normal(size=3)))
            ids = sorted(g.nodes)
            for _ in range(int(rng.integers(1, 3 * n))):
                a, b = rng.choice(ids, size=2, replace=False)
                w = float(rng.uniform())
                g.upsert_edge(edge(a, b, weight=w, rtype=f"r{rng.integers(100)}"))
            seeds = list(rng.choice(ids, size=min(2, n), replace=False))
            max_hops = int(rng.integers(0, 4))
            min_w = float(rng.uniform(0, 1))
            sub = g.traverse(seeds, max_hops=max_hops, min_edge_weight=min_w,
                             max_nodes=10_000)

            # oracle: plain BFS
            adj = {}
            for e in g.edges.values():
                if e.weight >= min_w:
                    adj.setdefault(e.head, set()).add(e.tail)
                    adj.setdefault(e.tail, set()).add(e.head)
            hop = {s: 0 for s in seeds}
            frontier = list(dict.fromkeys(seeds))
            depth = 0
            while frontier and depth < max_hops:
                depth += 1
                nxt = []
                for u in frontier:
                    for v in adj.get(u, ()):  # noqa: B905
                        if v not in hop:
                            hop[v] = depth
                            nxt.append(v)
                frontier = nxt
            assert sub.node_ids() == set(hop)
            assert sub.hop_of == hop


class TestGraphRelevance:
    def test_empty_subgraph(self):
        assert graph_relevance(Subgraph()) == 0.0

    def test_single_perfect_seed(self):
        g = GraphStore()
        g.upsert_node(node("A", [1, 0, 0]))
        sub = g.traverse(["A"], max_hops=0, seed_similarities={"A": 1.0})
        assert graph_relevance(sub) == pytest.approx(1.0)

    def test_decay_formula_hand_case(self):
        # seed sim 0.8, one 1-hop neighbor over weight-1.0 edge, gamma 0.5:
        # (0.8*1 + 0.5*0.8*1.0) / (1 + 0.5) = 0.8
        g = GraphStore()
        g.upsert_node(node("A", [1, 0, 0]))
        g.upsert_node(node("B", [0, 1, 0]))
        g.upsert_edge(edge("A", "B", weight=1.0))
        sub = g.traverse(["A"], max_hops=1, seed_similarities={"A": 0.8})
        assert graph_relevance(sub, gamma=0.5) == pytest.approx(0.8, abs=1e-12)

    def test_bounded_and_zero_iff_empty(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            g = GraphStore()
            n = int(rng.integers(2, 10))
            for i in range(n):
                g.upsert_node(node(f"n{i}", rng.normal(size=3)))
            ids = sorted(g.nodes)
            for _ in range(int(rng.integers(0, 2 * n))):
                a, b = rng.choice(ids, size=2, replace=False)
                g.upsert_edge(edge(a, b, weight=float(rng.uniform()),
                                   rtype=f"r{rng.integers(50)}"))
            sims = {i: float(rng.uniform()) for i in ids[:2]}
            sub = g.traverse(list(sims), max_hops=2, min_edge_weight=0.0,
                             seed_similarities=sims)
            r = graph_relevance(sub)
            assert 0.0 <= r <= 1.0

    def test_monotone_in_seed_similarity(self):
        g = GraphStore()
        g.upsert_node(node("A", [1, 0, 0]))
        g.upsert_node(node("B", [0, 1, 0]))
        g.upsert_edge(edge("A", "B", weight=0.7))
        low = g.traverse(["A"], max_hops=1, seed_similarities={"A": 0.3})
        high = g.traverse(["A"], max_hops=1, seed_similarities={"A": 0.9})
        assert graph_relevance(high) >= graph_relevance(low)


class TestPersistence:
    def test_export_import_isomorphic(self, tmp_path, path_graph):
        out = tmp_path / "export.jsonl"
        path_graph.export_jsonl(out)
        loaded = GraphStore.import_jsonl(out)
        assert loaded.nodes == path_graph.nodes
        assert loaded.edges == path_graph.edges

    def test_append_log_replay(self, tmp_path):
        log = tmp_path / "graph.jsonl"
        g = GraphStore(log)
        g.upsert_node(node("A", [1, 0, 0]))
        g.upsert_node(node("B", [0, 1, 0]))
        g.upsert_edge(edge("A", "B", weight=0.5))
        replayed = GraphStore(log)
        assert replayed.nodes == g.nodes
        assert replayed.edges == g.edges
