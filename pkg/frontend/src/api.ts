/** Typed client for the QA service HTTP API. */

export interface Citation {
  marker: number;
  chunk_id: string;
  doc_id: string;
  section_path: string[];
  page: number | null;
  doc_title: string;
}

export interface Fusion {
  alpha: number;
  max_chunk_sim: number;
  graph_relevance: number;
  value: number;
}

export interface AnswerEnvelope {
  naive: string;
  refined: string;
  condensed: string;
  citations: Citation[];
  followups: string[];
  abstained: boolean;
  trace_id: string;
  fusion: Fusion | null;
}

export interface ChatResponse extends AnswerEnvelope {
  session_id: string;
}

export interface TraceEvent {
  trace_id: string;
  step: string;
  input_digest: string;
  output_digest: string;
  duration_ms: number;
  timestamp: number;
  detail?: Record<string, unknown>;
}

export interface TraceResponse {
  trace_id: string;
  events: TraceEvent[];
}

export class ServiceError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin wrapper around fetch; every method raises ServiceError on a
 * non-2xx status so callers can branch on the code. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // keep the status text
      }
      throw new ServiceError(response.status, detail);
    }
    return response.json();
  }

  async chat(query: string, sessionId?: string): Promise<ChatResponse> {
    return (await this.request("/chat", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(
        sessionId ? { query, session_id: sessionId } : { query },
      ),
    })) as ChatResponse;
  }

  async trace(traceId: string): Promise<TraceResponse> {
    return (await this.request(`/trace/${traceId}`)) as TraceResponse;
  }

  async uploadDocument(content: string, format = "markdown"): Promise<unknown> {
    return this.request("/documents", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ content, format }),
    });
  }
}
