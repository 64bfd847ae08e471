"""Operator command line: ingest, build-kg, query, serve, eval, export-graph.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 provider failure, 5 unanswerable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .app import AppConfig, Pipeline, load_config
from .errors import (
    EmptyDocument,
    GatewayFailure,
    Unanswerable,
    UndecodableInput,
)
from .evalkit import load_dataset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PROVIDER = 4
EXIT_UNANSWERABLE = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dorag",
        description="Knowledge-graph-enhanced retrieval-augmented QA pipeline.",
    )
    parser.add_argument("--data-dir", default=None, help="data directory")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--transcript", default=None,
                        help="scripted transcript path (mock provider)")
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--k-chunks", type=int, default=None)
    parser.add_argument("--k-seed", type=int, default=None)
    parser.add_argument("--max-hops", type=int, default=None)
    parser.add_argument("--min-edge-weight", type=float, default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="chunk and index documents")
    p_ingest.add_argument("paths", nargs="+")

    sub.add_parser("build-kg", help="drain the extraction queue into the graph")

    p_query = sub.add_parser("query", help="answer a single question")
    p_query.add_argument("text")
    p_query.add_argument("--session", default="")

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)

    p_eval = sub.add_parser("eval", help="run the metric suite on a dataset")
    p_eval.add_argument("dataset")

    p_export = sub.add_parser("export-graph", help="write the graph as JSONL")
    p_export.add_argument("path")

    return parser


def _make_config(args: argparse.Namespace) -> AppConfig:
    config = load_config(args.config)
    if args.data_dir:
        config.data_dir = args.data_dir
    if args.transcript:
        config.provider = "mock"
        config.transcript = args.transcript
    for flag, attr in (("alpha", "alpha"), ("k_chunks", "k_chunks"),
                       ("k_seed", "k_seed"), ("max_hops", "max_hops"),
                       ("min_edge_weight", "min_edge_weight")):
        value = getattr(args, flag)
        if value is not None:
            setattr(config, attr, value)
    return config


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    config = _make_config(args)

    try:
        if args.command == "serve":
            from .service import serve
            serve(config, host=args.host, port=args.port)
            return EXIT_OK

        pipeline = Pipeline(config)

        if args.command == "ingest":
            results = []
            for path in args.paths:
                if not Path(path).exists():
                    print(f"no such file: {path}", file=sys.stderr)
                    return EXIT_IO
                results.append(pipeline.ingest_path(path))
            if args.json:
                print(json.dumps(results, indent=2))
            else:
                for r in results:
                    print(f"{r['doc_id']}  {r['chunk_count']} chunks  "
                          f"({r['title'] or 'untitled'})")
            return EXIT_OK

        if args.command == "build-kg":
            totals = pipeline.build_kg()
            if args.json:
                print(json.dumps(totals, indent=2))
            else:
                print(f"extracted {totals['chunks']} chunks: "
                      f"+{totals['new_nodes']} nodes, "
                      f"{totals['merged_nodes']} merged, "
                      f"+{totals['new_edges']} edges, "
                      f"{totals['synopsis_nodes']} synopsis nodes")
            return EXIT_OK

        if args.command == "query":
            envelope, _bundle = pipeline.ask(args.text, session_id=args.session)
            if args.json:
                print(json.dumps(envelope.to_dict(), indent=2, ensure_ascii=False))
            else:
                print(envelope.condensed)
                for citation in envelope.citations:
                    location = " > ".join(citation.section_path) or citation.doc_title
                    page = f", p.{citation.page}" if citation.page else ""
                    print(f"  [{citation.marker}] {citation.doc_title}: "
                          f"{location}{page}")
                for question in envelope.followups:
                    print(f"  ? {question}")
            return EXIT_OK

        if args.command == "eval":
            if not Path(args.dataset).exists():
                print(f"no such file: {args.dataset}", file=sys.stderr)
                return EXIT_IO
            dataset = load_dataset(args.dataset)
            result = pipeline.run_eval(dataset)
            if args.json:
                print(json.dumps(result.to_dict(), indent=2))
            else:
                print(result.table())
            return EXIT_OK

        if args.command == "export-graph":
            pipeline.graph.export_jsonl(args.path)
            if not args.json:
                print(f"wrote {pipeline.graph.node_count()} nodes, "
                      f"{pipeline.graph.edge_count()} edges to {args.path}")
            return EXIT_OK

    except Unanswerable:
        print("I do not know. (both the index and the graph are empty; "
              "ingest documents first)", file=sys.stderr)
        return EXIT_UNANSWERABLE
    except GatewayFailure as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (OSError, UndecodableInput, EmptyDocument) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
