"""Acceptance gate: eight end-to-end criteria, one printed verdict each.

Each criterion is a single test that prints "ACCEPTANCE <name>: PASS" or
"... FAIL" so the gate can be read off the test output directly.
"""

import contextlib
import json
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from dorag.app import AppConfig, Pipeline
from dorag.chunkstore import ChunkStore
from dorag.cli import main as cli_main
from dorag.embed import Embedding, HashProjectionProvider, cosine
from dorag.evalkit import (
    answer_relevancy,
    composite,
    contextual_precision,
    contextual_recall,
    faithfulness,
)
from dorag.gateway import FailingProvider, Gateway, GatewayRequest, MockProvider, Transcript
from dorag.generation import ABSTAIN_TEXT, Generator, extract_markers
from dorag.index import VectorIndex
from dorag.ingest import Chunk, ChunkMetadata
from dorag.kg.store import EntityNode, GraphStore, RelationEdge, edge_id_for, graph_relevance
from dorag.retrieval import (
    FusionScore,
    QueryDecomposition,
    RetrievalBundle,
    RetrievalConfig,
    Retriever,
    SubQuery,
    fuse,
)
from dorag.service import create_app
from fixtures import golden
from fixtures.make_goldens import GOLDENS, render, run_golden_pipeline

WORDS = ("checkpoint interval segment recovery cache planner timeout page "
         "fsync wal engine retry backoff replica index copy scan merge flush "
         "log record statistics plan cost durable torn tail alert").split()


@contextlib.contextmanager
def criterion(name, budget_s):
    started = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    elapsed = time.monotonic() - started
    if elapsed > budget_s:
        print(f"ACCEPTANCE {name}: FAIL (took {elapsed:.1f}s > {budget_s}s)")
        raise AssertionError(f"{name} exceeded {budget_s}s: {elapsed:.1f}s")
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.1f}s)")


def random_text(rng, n_words=6):
    return " ".join(rng.choice(WORDS) for _ in range(n_words))


def scripted_judge(*entries):
    t = Transcript(strict=True)
    for item in entries:
        t.add(*item)
    return Gateway(MockProvider(t), sleep=lambda _t: None)


# ------------------------------------------------------------------
# 1. metric oracle suite
# ------------------------------------------------------------------
def test_metric_oracles(embedder):
    with criterion("metric-oracles", 10):
        rng = np.random.default_rng(100)

        # documented hand cases
        assert contextual_precision([1, 0, 1]) == pytest.approx(0.833333, abs=1e-6)
        assert composite(0.820407, 1.000000, 0.918463, 0.677958) == \
            pytest.approx(0.854207, abs=1e-6)

        # 60 random precision cases against an independent oracle
        for _ in range(60):
            flags = [int(v) for v in rng.integers(0, 2, size=rng.integers(1, 12))]
            relevant = sum(flags)
            if relevant == 0:
                expected = 0.0
            else:
                expected = sum(sum(flags[:k]) / k
                               for k in range(1, len(flags) + 1)
                               if flags[k - 1]) / relevant
            assert contextual_precision(flags) == pytest.approx(expected, abs=1e-9)

        # 60 random composite cases
        for _ in range(60):
            vals = rng.uniform(size=4)
            assert composite(*vals) == pytest.approx(float(vals.mean()), abs=1e-9)

        # 40 random relevancy cases against raw cosine means
        for _ in range(40):
            query = random_text(rng)
            answers = [random_text(rng) for _ in range(3)]
            q = embedder.embed(query)
            expected = min(1.0, max(0.0, sum(
                cosine(embedder.embed(a), q) for a in answers) / 3))
            assert answer_relevancy(query, answers, embedder) == \
                pytest.approx(expected, abs=1e-9)

        # 20 random recall and 20 random faithfulness cases via scripted judges
        for _ in range(20):
            flags = [int(v) for v in rng.integers(0, 2, size=rng.integers(1, 8))]
            judge = scripted_judge(("judge_recall.v1", {
                "statements": [{"text": f"s{i}", "attributable": bool(v)}
                               for i, v in enumerate(flags)]}))
            assert contextual_recall("gt", ["ctx"], judge) == \
                pytest.approx(sum(flags) / len(flags), abs=1e-9)
        for _ in range(20):
            flags = [int(v) for v in rng.integers(0, 2, size=rng.integers(1, 8))]
            judge = scripted_judge(("judge_faithfulness.v1", {
                "claims": [{"text": f"c{i}", "truthful": bool(v)}
                           for i, v in enumerate(flags)]}))
            assert faithfulness("some answer", ["ctx"], judge) == \
                pytest.approx(sum(flags) / len(flags), abs=1e-9)
        assert faithfulness(ABSTAIN_TEXT, [], scripted_judge()) == 1.0


# ------------------------------------------------------------------
# 2. fusion law
# ------------------------------------------------------------------
def test_fusion_law():
    with criterion("fusion-law", 5):
        rng = np.random.default_rng(200)
        for _ in range(1000):
            alpha = float(rng.uniform())
            sims = [float(v) for v in rng.uniform(-1, 1, size=rng.integers(0, 6))]
            relevance = float(rng.uniform())
            hits = [(f"c{i}", s) for i, s in enumerate(sims)]
            score = fuse(alpha, hits, relevance)
            expected = alpha * (max(sims) if sims else 0.0) + \
                (1 - alpha) * relevance
            assert score.value == pytest.approx(expected, abs=1e-12)

        # exact boundary behavior
        for _ in range(50):
            sim = float(rng.uniform(-1, 1))
            relevance = float(rng.uniform())
            assert fuse(1.0, [("c", sim)], relevance).value == sim
            assert fuse(0.0, [("c", sim)], relevance).value == relevance

        # monotone in both inputs
        for _ in range(200):
            alpha = float(rng.uniform())
            s1, s2 = sorted(rng.uniform(size=2))
            r1, r2 = sorted(rng.uniform(size=2))
            assert fuse(alpha, [("c", s2)], r1).value >= \
                fuse(alpha, [("c", s1)], r1).value
            assert fuse(alpha, [("c", s1)], r2).value >= \
                fuse(alpha, [("c", s1)], r1).value


# ------------------------------------------------------------------
# 3. traversal oracle
# ------------------------------------------------------------------
def test_traversal_oracle():
    with criterion("traversal-oracle", 10):
        rng = np.random.default_rng(300)
        for _trial in range(100):
            g = GraphStore()
            n = int(rng.integers(2, 51))
            for i in range(n):
                g.upsert_node(EntityNode(
                    node_id=f"n{i:02d}", name=f"n{i:02d}",
                    entity_type="component", description="",
                    embedding=Embedding(tuple(rng.normal(size=4)), "t"),
                    provenance=["c0"]))
            ids = sorted(g.nodes)
            for _ in range(int(rng.integers(1, 3 * n))):
                a, b = rng.choice(ids, size=2, replace=False)
                g.upsert_edge(RelationEdge(
                    edge_id=edge_id_for(a, b, f"r{rng.integers(10)}"),
                    head=a, tail=b, relation_type=f"r{rng.integers(10)}",
                    weight=float(rng.uniform()), provenance=["c0"]))
            seeds = sorted(rng.choice(ids, size=int(rng.integers(1, 4)),
                                      replace=False))
            max_hops = int(rng.integers(0, 4))
            min_w = float(rng.uniform())
            sub = g.traverse(seeds, max_hops=max_hops, min_edge_weight=min_w,
                             max_nodes=10_000)

            adj = {}
            for e in g.edges.values():
                if e.weight >= min_w:
                    adj.setdefault(e.head, set()).add(e.tail)
                    adj.setdefault(e.tail, set()).add(e.head)
            hop = {s: 0 for s in seeds}
            frontier = list(seeds)
            for depth in range(1, max_hops + 1):
                nxt = []
                for u in frontier:
                    for v in adj.get(u, ()):
                        if v not in hop:
                            hop[v] = depth
                            nxt.append(v)
                frontier = nxt
                if not frontier:
                    break
            assert sub.node_ids() == set(hop)
            assert sub.hop_of == hop
            assert 0.0 <= graph_relevance(sub) <= 1.0


# ------------------------------------------------------------------
# 4. vector search oracle
# ------------------------------------------------------------------
def test_vector_search_oracle():
    with criterion("vector-search-oracle", 10):
        rng = np.random.default_rng(400)
        for _trial in range(100):
            n = int(rng.integers(1, 501))
            index = VectorIndex(dim=64, model_tag="t")
            matrix = rng.normal(size=(n, 64))
            ids = [f"v{i:03d}" for i in range(n)]
            for cid, row in zip(ids, matrix):
                index.add(cid, Embedding(tuple(row), "t"))
            query = rng.normal(size=64)

            k = int(rng.integers(1, 20))
            got = index.search(Embedding(tuple(query), "t"), k=k)

            normed = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
            sims = normed @ (query / np.linalg.norm(query))
            expected = sorted(zip(ids, sims.tolist()),
                              key=lambda p: (-p[1], p[0]))[:k]
            assert [cid for cid, _ in got] == [cid for cid, _ in expected]
            for (_, sa), (_, sb) in zip(got, expected):
                assert sa == pytest.approx(sb, abs=1e-9)

            # prefix property: a smaller k is a prefix of a larger one
            small = index.search(Embedding(tuple(query), "t"), k=max(1, k // 2))
            assert small == got[:len(small)]


# ------------------------------------------------------------------
# 5. KG build properties
# ------------------------------------------------------------------
def build_fixture_pipeline(data_dir, dedup_threshold=0.90):
    gateway = Gateway(MockProvider(golden.build_transcript()),
                      sleep=lambda _t: None)
    pipeline = Pipeline(AppConfig(data_dir=str(data_dir),
                                  dedup_threshold=dedup_threshold),
                        gateway=gateway)
    for path in golden.CORPUS:
        pipeline.ingest_path(path)
    pipeline.build_kg()
    return pipeline


HYBRID_QUERIES = [
    ("checkpoint_interval default", "checkpoint_interval"),
    ("how often does the checkpointer run", "checkpointer"),
    ("dirty page flushing", "dirty pages"),
    ("write amplification from short intervals", "write amplification"),
    ("wal_segment_size default", "wal_segment_size"),
    ("write-ahead log segment size", "log segment"),
    ("wal_compression flag", "wal_compression"),
    ("segment recycling", "recycl"),
    ("gstart_timeout default", "gstart_timeout"),
    ("crash recovery time bound", "crash recovery"),
    ("page cache design", "page cache"),
    ("copy-on-write B-tree", "b-tree"),
    ("who calls fsync", "fsync"),
    ("append-only segments", "append-only"),
    ("surviving power loss", "power loss"),
    ("checkpoint timer", "timer"),
    ("query planner cost model", "query planner"),
    ("candidate plan enumeration", "candidate plans"),
    ("table statistics", "statistics"),
    ("ERR_GSTART_TIMEOUT cause", "err_gstart_timeout"),
    ("startup aborts", "aborts"),
    ("ERR_WAL_CRC checksum mismatch", "err_wal_crc"),
    ("log truncation on corruption", "truncates"),
    ("torn tail discard", "torn tail"),
    ("checkpoint retry with backoff", "retried"),
]


def retrieved_sets(retriever, query, config):
    bundle = retriever.build_bundle(query, config=config)
    vector_set = {cid for cid, _sim in bundle.chunk_hits}
    graph_set = {cid for node in bundle.subgraph.nodes
                 for cid in node.provenance}
    return vector_set, vector_set | graph_set


def test_kg_build_properties(tmp_path, embedder):
    with criterion("kg-build-properties", 30):
        pipeline = build_fixture_pipeline(tmp_path / "base")

        # provenance closure: every node and edge traces to stored chunks
        known = {c.chunk_id for c in pipeline.chunks.all_chunks()}
        for node in pipeline.graph.nodes.values():
            assert set(node.provenance) <= known
        for edge in pipeline.graph.edges.values():
            assert set(edge.provenance) <= known

        # idempotence: re-extracting identical chunks leaves the graph as is
        from dorag.kg.builder import extract_chunk
        before_nodes = {k: v.to_dict() for k, v in pipeline.graph.nodes.items()}
        before_edges = {k: v.to_dict() for k, v in pipeline.graph.edges.items()}
        for chunk in pipeline.chunks.all_chunks():
            report = extract_chunk(chunk, pipeline.graph, pipeline.gateway,
                                   pipeline.embedder)
            assert report.new_nodes == 0
            assert report.new_edges == 0
        assert {k: v.to_dict() for k, v in pipeline.graph.nodes.items()} == \
            before_nodes
        assert {k: v.to_dict() for k, v in pipeline.graph.edges.items()} == \
            before_edges

        # dedup threshold monotonicity: lower thresholds never add nodes
        counts = []
        for i, threshold in enumerate((0.99, 0.90, 0.50, 0.10)):
            p = build_fixture_pipeline(tmp_path / f"thr{i}",
                                       dedup_threshold=threshold)
            counts.append(p.graph.node_count())
        assert counts == sorted(counts, reverse=True)

        # hybrid recall >= vector-only recall on a 25-query fixture
        config = RetrievalConfig(k_chunks=2, k_seed=3, max_hops=2,
                                 min_edge_weight=0.0)
        dead_gateway = Gateway(FailingProvider(), retries=1,
                               sleep=lambda _t: None)
        hybrid = Retriever(pipeline.graph, pipeline.index, pipeline.chunks,
                           pipeline.embedder, dead_gateway)
        chunks_by_id = {c.chunk_id: c.content.lower()
                        for c in pipeline.chunks.all_chunks()}
        total_vec = total_hyb = 0.0
        for query, needle in HYBRID_QUERIES:
            relevant = {cid for cid, text in chunks_by_id.items()
                        if needle in text}
            assert relevant, f"fixture term not found: {needle}"
            vec_set, hyb_set = retrieved_sets(hybrid, query, config)
            assert vec_set <= hyb_set
            recall_vec = len(vec_set & relevant) / len(relevant)
            recall_hyb = len(hyb_set & relevant) / len(relevant)
            assert recall_hyb >= recall_vec
            total_vec += recall_vec
            total_hyb += recall_hyb
        assert total_hyb >= total_vec


# ------------------------------------------------------------------
# 6. end-to-end golden run
# ------------------------------------------------------------------
def test_golden_run(tmp_path):
    with criterion("golden-run", 60):
        payload = run_golden_pipeline(str(tmp_path / "data"))
        produced = render(payload)
        expected = (GOLDENS / "golden_run.json").read_text(encoding="utf-8")
        assert produced == expected

        abstained = [t for t in payload["turns"] if t["envelope"]["abstained"]]
        assert len(abstained) == 1
        envelope = abstained[0]["envelope"]
        assert envelope["condensed"] == "I do not know."
        assert envelope["citations"] == []
        assert envelope["followups"] == []


# ------------------------------------------------------------------
# 7. citation soundness fuzz
# ------------------------------------------------------------------
def random_reply(rng, n_evidence):
    if rng.uniform() < 0.05:
        return ABSTAIN_TEXT
    parts = []
    for _ in range(int(rng.integers(1, 5))):
        parts.append(rng.choice(WORDS))
        roll = rng.uniform()
        if roll < 0.5:
            parts.append(f"[{int(rng.integers(1, n_evidence + 1))}]")
        elif roll < 0.7:
            # marker outside the evidence range
            parts.append(f"[{int(rng.integers(n_evidence + 1, n_evidence + 9))}]")
    return " ".join(parts)


def test_citation_soundness_fuzz():
    with criterion("citation-fuzz", 30):
        rng = np.random.default_rng(700)
        store = ChunkStore()
        store.register_doc("d", "Doc")
        for i in range(3):
            store.add(Chunk(chunk_id=f"c{i+1}", doc_id="d", seq=i,
                            content=f"evidence {i+1}",
                            metadata=ChunkMetadata()))
        hits = [(f"c{i+1}", 0.9 - i * 0.1) for i in range(3)]
        bundle = RetrievalBundle(
            decomposition=QueryDecomposition("q", [SubQuery("q")]),
            subgraph=None, rewritten_query="q", chunk_hits=hits,
            fusion=FusionScore(0.5, 0.9, 0.0, 0.45), trace_id="")
        from dorag.kg.store import Subgraph
        bundle.subgraph = Subgraph()

        for _variant in range(200):
            t = Transcript(strict=True)
            t.add("naive.v1", random_reply(rng, 3), template="naive.v1")
            t.add("refine.v1", random_reply(rng, 3), template="refine.v1")
            t.add("condense.v1", random_reply(rng, 3), template="condense.v1")
            t.add("followup.v1", {"questions": []}, template="followup.v1")
            generator = Generator(
                Gateway(MockProvider(t), sleep=lambda _t: None), store)
            envelope = generator.answer(bundle, "q")

            markers = extract_markers(envelope.condensed)
            cited = {c.marker for c in envelope.citations}
            if envelope.abstained:
                assert envelope.citations == []
                assert envelope.condensed == ABSTAIN_TEXT
                continue
            # every surviving marker resolves to real evidence, and every
            # citation is referenced by the text
            assert markers == cited
            assert all(1 <= m <= 3 for m in cited)
            for c in envelope.citations:
                assert store.get(c.chunk_id) is not None


# ------------------------------------------------------------------
# 8. CLI / service equivalence
# ------------------------------------------------------------------
def test_cli_service_equivalence(tmp_path, capsys):
    with criterion("cli-service-equivalence", 60):
        transcript_path = str(golden.write_transcript(tmp_path / "t.json"))
        session = "equiv"

        cli_dir = str(tmp_path / "cli-data")
        code = cli_main(["--data-dir", cli_dir, "--transcript", transcript_path,
                         "ingest"] + [str(p) for p in golden.CORPUS])
        assert code == 0
        assert cli_main(["--data-dir", cli_dir, "--transcript",
                         transcript_path, "build-kg"]) == 0
        capsys.readouterr()
        cli_envelopes = []
        for q in golden.QUERIES:
            code = cli_main(["--data-dir", cli_dir, "--transcript",
                             transcript_path, "--json", "query", q["query"],
                             "--session", session])
            assert code == 0
            cli_envelopes.append(json.loads(capsys.readouterr().out))

        gateway = Gateway(MockProvider(golden.build_transcript()),
                          sleep=lambda _t: None)
        pipeline = Pipeline(AppConfig(data_dir=str(tmp_path / "svc-data")),
                            gateway=gateway)
        client = TestClient(create_app(pipeline, kg_sync=True))
        for path in golden.CORPUS:
            assert client.post("/documents", json={
                "content": path.read_text(encoding="utf-8")}).status_code == 200
        service_envelopes = []
        for q in golden.QUERIES:
            body = client.post("/chat", json={
                "query": q["query"], "session_id": session}).json()
            body.pop("session_id")
            service_envelopes.append(body)

        assert cli_envelopes == service_envelopes
