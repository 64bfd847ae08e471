"""Evaluation metrics: answer relevancy, contextual recall, contextual
precision at K, faithfulness, and their composite, with a 0.7 per-metric
success threshold.

Statement and claim splitting is judge-driven: an LLM labels each
ground-truth statement as attributable and each answer claim as truthful
against the retrieved context.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .errors import EmptyText, NoClaims, NoStatements, OutOfRange
from .gateway import Gateway, GatewayRequest
from .generation import ABSTAIN_TEXT
from .trace import TraceLog

SUCCESS_THRESHOLD = 0.7
N_ANSWERS = 3
METRIC_NAMES = ("answer_relevancy", "contextual_recall",
                "contextual_precision", "faithfulness")


@dataclass
class EvalRecord:
    question: str
    ground_truth: str
    source: dict = field(default_factory=dict)  # chapter, section, page

    def validate(self) -> None:
        if not self.question.strip():
            raise ValueError("empty question")
        if not self.ground_truth.strip():
            raise ValueError("empty ground truth")
        page = self.source.get("page")
        if page is not None and page < 1:
            raise ValueError("page must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        record = cls(question=d["question"], ground_truth=d["ground_truth"],
                     source=dict(d.get("source", {})))
        record.validate()
        return record


@dataclass
class MetricReport:
    answer_relevancy: float
    contextual_recall: float
    contextual_precision: float
    faithfulness: float
    composite: float
    passed: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "answer_relevancy": self.answer_relevancy,
            "contextual_recall": self.contextual_recall,
            "contextual_precision": self.contextual_precision,
            "faithfulness": self.faithfulness,
            "composite": self.composite,
            "passed": dict(self.passed),
        }


def make_report(ar: float, cr: float, cp: float, f: float,
                threshold: float = SUCCESS_THRESHOLD) -> MetricReport:
    return MetricReport(
        answer_relevancy=ar,
        contextual_recall=cr,
        contextual_precision=cp,
        faithfulness=f,
        composite=composite(ar, cr, cp, f),
        passed={
            "answer_relevancy": ar >= threshold,
            "contextual_recall": cr >= threshold,
            "contextual_precision": cp >= threshold,
            "faithfulness": f >= threshold,
        },
    )


# --- metric formulas ------------------------------------------------------

def answer_relevancy(query: str, answers: list[str], embedder) -> float:
    """Mean cosine between the query embedding and three answer embeddings,
    floored at 0."""
    from .embed import cosine

    if len(answers) != N_ANSWERS:
        raise ValueError(f"expected exactly {N_ANSWERS} answers, got {len(answers)}")
    if not query.strip():
        raise EmptyText("empty query")
    for answer in answers:
        if not answer.strip():
            raise EmptyText("empty answer")
    query_emb = embedder.embed(query)
    total = sum(cosine(embedder.embed(a), query_emb) for a in answers)
    return min(1.0, max(0.0, total / N_ANSWERS))


def contextual_recall(ground_truth: str, retrieved_context: list[str],
                      judge: Gateway) -> float:
    """Fraction of ground-truth statements attributable to the context."""
    if not ground_truth.strip():
        raise EmptyText("empty ground truth")
    req = GatewayRequest(
        template_id="judge_recall.v1",
        rendered_prompt=prompts.render(
            "judge_recall.v1", ground_truth=ground_truth,
            context="\n\n".join(retrieved_context) or "(none)"),
        expect="json_schema",
        schema_id="judged_statements",
    )
    statements = judge.complete_json(req)["statements"]
    if not statements:
        raise NoStatements("judge extracted zero statements")
    attributable = sum(1 for s in statements if s["attributable"])
    return attributable / len(statements)


def contextual_precision(relevance_flags: list[int]) -> float:
    """Rank-weighted precision over top-K flags; zero relevant items -> 0."""
    if not relevance_flags:
        return 0.0
    relevant_total = sum(relevance_flags)
    if relevant_total == 0:
        return 0.0
    acc = 0.0
    seen_relevant = 0
    for k, flag in enumerate(relevance_flags, start=1):
        if flag:
            seen_relevant += 1
            acc += seen_relevant / k
    return acc / relevant_total


def faithfulness(answer: str, retrieved_context: list[str],
                 judge: Gateway) -> float:
    """Fraction of answer claims the context supports; abstention scores 1."""
    if not answer.strip():
        raise EmptyText("empty answer")
    if answer.strip() == ABSTAIN_TEXT:
        return 1.0
    req = GatewayRequest(
        template_id="judge_faithfulness.v1",
        rendered_prompt=prompts.render(
            "judge_faithfulness.v1", answer=answer,
            context="\n\n".join(retrieved_context) or "(none)"),
        expect="json_schema",
        schema_id="judged_claims",
    )
    claims = judge.complete_json(req)["claims"]
    if not claims:
        raise NoClaims("judge extracted zero claims from a non-abstained answer")
    truthful = sum(1 for c in claims if c["truthful"])
    return truthful / len(claims)


def composite(ar: float, cr: float, cp: float, f: float) -> float:
    """Arithmetic mean of the four core metrics."""
    for value in (ar, cr, cp, f):
        if not 0.0 <= value <= 1.0:
            raise OutOfRange(f"metric value {value} outside [0,1]")
    return (ar + cr + cp + f) / 4.0


# --- suite runner ---------------------------------------------------------

def judge_relevance_flags(query: str, ground_truth: str,
                          contexts: list[str], judge: Gateway) -> list[int]:
    """Ask the judge for one 0/1 relevance flag per ranked context item."""
    if not contexts:
        return []
    numbered = "\n\n".join(f"[{i}] {c}" for i, c in enumerate(contexts, start=1))
    req = GatewayRequest(
        template_id="judge_precision.v1",
        rendered_prompt=prompts.render(
            "judge_precision.v1", query=query, ground_truth=ground_truth,
            context=numbered),
        expect="json_schema",
        schema_id="relevance_flags",
    )
    flags = judge.complete_json(req)["flags"]
    # tolerate length drift from the judge; truncate or pad with 0
    flags = flags[:len(contexts)] + [0] * max(0, len(contexts) - len(flags))
    return flags


@dataclass
class SuiteResult:
    reports: list[MetricReport | None]
    failures: dict[int, str]
    aggregate: dict

    def to_dict(self) -> dict:
        return {
            "reports": [r.to_dict() if r else None for r in self.reports],
            "failures": {str(k): v for k, v in self.failures.items()},
            "aggregate": self.aggregate,
        }

    def table(self) -> str:
        """Aligned plain-text table, one row per record plus the means."""
        header = f"{'record':>6}  {'AR':>8}  {'CR':>8}  {'CP@K':>8}  {'F':>8}  {'composite':>9}"
        lines = [header, "-" * len(header)]
        for i, report in enumerate(self.reports):
            if report is None:
                lines.append(f"{i:>6}  {'FAILED: ' + self.failures.get(i, '?'):<40}")
            else:
                lines.append(
                    f"{i:>6}  {report.answer_relevancy:>8.6f}  "
                    f"{report.contextual_recall:>8.6f}  "
                    f"{report.contextual_precision:>8.6f}  "
                    f"{report.faithfulness:>8.6f}  {report.composite:>9.6f}"
                )
        agg = self.aggregate
        if agg.get("scored", 0):
            lines.append("-" * len(header))
            lines.append(
                f"{'mean':>6}  {agg['mean']['answer_relevancy']:>8.6f}  "
                f"{agg['mean']['contextual_recall']:>8.6f}  "
                f"{agg['mean']['contextual_precision']:>8.6f}  "
                f"{agg['mean']['faithfulness']:>8.6f}  "
                f"{agg['mean']['composite']:>9.6f}"
            )
            rates = agg["pass_rate"]
            lines.append(
                "pass@0.7  AR=%.2f CR=%.2f CP=%.2f F=%.2f"
                % (rates["answer_relevancy"], rates["contextual_recall"],
                   rates["contextual_precision"], rates["faithfulness"])
            )
        else:
            lines.append("(aggregate undefined: no scored records)")
        return "\n".join(lines)


def load_dataset(path: str | Path) -> list[EvalRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(EvalRecord.from_dict(json.loads(line)))
    return records


def run_suite(dataset: list[EvalRecord], pipeline, judge: Gateway, embedder,
              threshold: float = SUCCESS_THRESHOLD,
              trace_log: TraceLog | None = None) -> SuiteResult:
    """Evaluate the pipeline on every record; record-level errors are
    isolated, not propagated.

    `pipeline` must expose ask(query) -> (envelope, bundle) and
    chunk_text(chunk_id) -> str.
    """
    reports: list[MetricReport | None] = []
    failures: dict[int, str] = {}
    for index, record in enumerate(dataset):
        try:
            answers = []
            envelope = bundle = None
            for _variant in range(N_ANSWERS):
                envelope, bundle = pipeline.ask(record.question)
                answers.append(envelope.condensed)
            contexts = [pipeline.chunk_text(cid) for cid, _sim in bundle.chunk_hits]
            contexts = [c for c in contexts if c]

            started = time.monotonic()
            ar = answer_relevancy(record.question, answers, embedder)
            cr = contextual_recall(record.ground_truth, contexts, judge)
            flags = judge_relevance_flags(record.question, record.ground_truth,
                                          contexts, judge)
            cp = contextual_precision(flags)
            f = faithfulness(envelope.condensed, contexts, judge)
            if trace_log and envelope.trace_id:
                trace_log.record(
                    envelope.trace_id, "judge",
                    record.question,
                    {"ar": ar, "cr": cr, "cp": cp, "f": f},
                    duration_ms=(time.monotonic() - started) * 1000.0)
            reports.append(make_report(ar, cr, cp, f, threshold))
        except Exception as exc:
            failures[index] = f"{type(exc).__name__}: {exc}"
            reports.append(None)

    scored = [r for r in reports if r is not None]
    if scored:
        mean = {
            name: sum(getattr(r, name) for r in scored) / len(scored)
            for name in METRIC_NAMES
        }
        mean["composite"] = sum(r.composite for r in scored) / len(scored)
        pass_rate = {
            name: sum(1 for r in scored if r.passed[name]) / len(scored)
            for name in METRIC_NAMES
        }
        aggregate = {"scored": len(scored), "failed": len(failures),
                     "mean": mean, "pass_rate": pass_rate,
                     "threshold": threshold}
    else:
        aggregate = {"scored": 0, "failed": len(failures),
                     "undefined": True, "threshold": threshold}
    return SuiteResult(reports=reports, failures=failures, aggregate=aggregate)
