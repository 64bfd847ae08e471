/** In-memory stand-in for the QA service, exposed as a fetch-compatible
 * function. Records every request for assertions. */

import { AnswerEnvelope, FetchLike, TraceEvent } from "../src/api.js";

export interface RecordedRequest {
  path: string;
  body: unknown;
}

export function envelopeFixture(
  overrides: Partial<AnswerEnvelope> = {},
): AnswerEnvelope {
  return {
    naive: "The default checkpoint interval is 300 seconds [1].",
    refined: "The default checkpoint interval is 300 seconds [1].",
    condensed: "300 seconds [1].",
    citations: [
      {
        marker: 1,
        chunk_id: "c016b27649114be8",
        doc_id: "51d11f8640ce5bcb",
        section_path: ["GridStoreDB Configuration Reference", "Checkpointing"],
        page: 1,
        doc_title: "GridStoreDB Configuration Reference",
      },
    ],
    followups: ["Can checkpoint_interval be changed at runtime?"],
    abstained: false,
    trace_id: "d71a7150e0f790f4",
    fusion: {
      alpha: 0.5,
      max_chunk_sim: 0.412133,
      graph_relevance: 0.204619,
      value: 0.308376,
    },
    ...overrides,
  };
}

export function traceEventsFixture(): TraceEvent[] {
  const steps = [
    "decompose",
    "kg_match",
    "traverse",
    "rewrite",
    "vector_search",
    "fuse",
    "naive",
    "refine",
    "condense",
    "followup",
  ];
  return steps.map((step, i) => ({
    trace_id: "d71a7150e0f790f4",
    step,
    input_digest: `in${i}`,
    output_digest: `out${i}`,
    duration_ms: 1.5,
    timestamp: 1700000000 + i,
    detail:
      step === "fuse"
        ? {
            alpha: 0.5,
            max_chunk_sim: 0.412133,
            graph_relevance: 0.204619,
            value: 0.5 * 0.412133 + 0.5 * 0.204619,
          }
        : undefined,
  }));
}

export interface StubOptions {
  envelope?: AnswerEnvelope;
  chatStatus?: number;
  traceEvents?: TraceEvent[];
  traceStatus?: number;
  networkFailure?: boolean;
}

export function makeStub(options: StubOptions = {}): {
  fetchImpl: FetchLike;
  requests: RecordedRequest[];
} {
  const requests: RecordedRequest[] = [];
  const fetchImpl: FetchLike = async (input, init) => {
    const path = input.replace(/^https?:\/\/[^/]+/, "");
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    requests.push({ path, body });
    if (options.networkFailure) {
      throw new TypeError("fetch failed");
    }
    if (path === "/chat") {
      const status = options.chatStatus ?? 200;
      if (status !== 200) {
        return jsonResponse(status, { detail: "unavailable" });
      }
      const envelope = options.envelope ?? envelopeFixture();
      return jsonResponse(200, { session_id: "s-stub", ...envelope });
    }
    if (path.startsWith("/trace/")) {
      const status = options.traceStatus ?? 200;
      if (status !== 200) {
        return jsonResponse(status, { detail: "unknown trace" });
      }
      return jsonResponse(200, {
        trace_id: path.slice("/trace/".length),
        events: options.traceEvents ?? traceEventsFixture(),
      });
    }
    return jsonResponse(404, { detail: `no stub for ${path}` });
  };
  return { fetchImpl, requests };
}

function jsonResponse(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
