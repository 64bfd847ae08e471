"""HTTP service orchestrating the full pipeline.

Endpoints: document ingest, chat with session history, trace inspection,
graph stats, KG build, and evaluation runs. JSON in and out; structured
log lines go to stdout.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import sys
import threading
import uuid

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from starlette.datastructures import UploadFile
from pydantic import BaseModel

from .app import AppConfig, DuplicateDocument, Pipeline
from .errors import EmptyDocument, Unanswerable, UndecodableInput
from .evalkit import EvalRecord
from .retrieval import RetrievalConfig

logger = logging.getLogger("dorag.service")


class ChatRequest(BaseModel):
    query: str
    session_id: str | None = None
    alpha: float | None = None
    k_chunks: int | None = None
    k_seed: int | None = None
    max_hops: int | None = None
    min_edge_weight: float | None = None


class DocumentRequest(BaseModel):
    content: str = ""
    content_base64: str = ""
    format: str = "markdown"
    origin_uri: str = ""


class EvalRequest(BaseModel):
    records: list[dict]


def _log_event(event: str, **payload) -> None:
    print(json.dumps({"event": event, **payload}, sort_keys=True, default=str),
          file=sys.stdout, flush=True)


def create_app(pipeline: Pipeline, kg_sync: bool = False) -> FastAPI:
    """Build the FastAPI app around one pipeline instance.

    kg_sync=True drains the extraction queue synchronously after each
    ingest (deterministic, used by tests); otherwise a background thread
    drains it.
    """
    app = FastAPI(title="dorag", version="0.1.0")
    app.state.pipeline = pipeline
    build_lock = threading.Lock()

    def drain_queue() -> None:
        with build_lock:
            totals = pipeline.build_kg()
        _log_event("kg_build", **totals)

    @app.post("/documents")
    async def post_document(request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = form.get("file")
            if upload is None or not isinstance(upload, UploadFile):
                raise HTTPException(400, "multipart body must contain a 'file' field")
            raw = await upload.read()
            fmt = str(form.get("format", "markdown"))
            origin_uri = upload.filename or ""
        else:
            try:
                body = DocumentRequest(**(await request.json()))
            except Exception:
                raise HTTPException(400, "body must be JSON or multipart")
            if body.content_base64:
                try:
                    raw = base64.b64decode(body.content_base64, validate=True)
                except (binascii.Error, ValueError):
                    raise HTTPException(400, "invalid base64 content")
            else:
                raw = body.content.encode("utf-8")
            fmt, origin_uri = body.format, body.origin_uri
        if not raw:
            raise HTTPException(400, "empty body")
        try:
            result = pipeline.ingest_bytes(raw, fmt, origin_uri=origin_uri)
        except DuplicateDocument as exc:
            return JSONResponse(status_code=409,
                                content={"detail": "duplicate document",
                                         "doc_id": exc.doc_id})
        except (UndecodableInput, EmptyDocument, ValueError) as exc:
            raise HTTPException(400, str(exc))
        _log_event("ingest", **result)
        if kg_sync:
            drain_queue()
        else:
            threading.Thread(target=drain_queue, daemon=True).start()
        return result

    @app.get("/documents/{doc_id}/status")
    def document_status(doc_id: str):
        if not pipeline.chunks.has_doc(doc_id):
            raise HTTPException(404, "unknown document")
        return {"doc_id": doc_id,
                "pending_extraction": len(pipeline.pending_extraction())}

    @app.post("/chat")
    def chat(body: ChatRequest):
        if not body.query.strip():
            raise HTTPException(422, "empty query")
        session_id = body.session_id or uuid.uuid4().hex[:12]
        config = pipeline.config.retrieval_config()
        for name in ("alpha", "k_chunks", "k_seed", "max_hops", "min_edge_weight"):
            value = getattr(body, name)
            if value is not None:
                setattr(config, name, value)
        try:
            envelope, _bundle = pipeline.ask(body.query, session_id=session_id,
                                             config=config)
        except Unanswerable as exc:
            raise HTTPException(503, str(exc))
        _log_event("chat", session_id=session_id, trace_id=envelope.trace_id,
                   abstained=envelope.abstained)
        return {"session_id": session_id, **envelope.to_dict()}

    @app.get("/trace/{trace_id}")
    def get_trace(trace_id: str):
        events = pipeline.trace_log.events_for(trace_id)
        if not events:
            raise HTTPException(404, "unknown trace")
        return {"trace_id": trace_id, "events": [e.to_dict() for e in events]}

    @app.get("/graph/stats")
    def graph_stats():
        return pipeline.stats()

    @app.post("/kg/build")
    def kg_build():
        with build_lock:
            totals = pipeline.build_kg()
        return totals

    @app.post("/eval/run")
    def eval_run(body: EvalRequest):
        try:
            dataset = [EvalRecord.from_dict(d) for d in body.records]
        except (KeyError, ValueError) as exc:
            raise HTTPException(400, f"bad dataset: {exc}")
        result = pipeline.run_eval(dataset)
        return result.to_dict()

    return app


def serve(config: AppConfig, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    pipeline = Pipeline(config)
    uvicorn.run(create_app(pipeline), host=host, port=port)
