/** Chat view state machine, independent of the DOM.
 *
 * Invariants:
 *  - pending=true means one request is in flight and input is disabled;
 *  - every rendered string (answers, chips, citations) comes verbatim
 *    from an AnswerEnvelope, never synthesized client-side;
 *  - a failed send leaves the conversation unchanged and records the
 *    failed text so a retry can resubmit it.
 */

import { AnswerEnvelope, ApiClient, Citation, ServiceError } from "./api.js";

export interface UserTurn {
  role: "user";
  text: string;
}

export interface AssistantTurn {
  role: "assistant";
  envelope: AnswerEnvelope;
}

export type Turn = UserTurn | AssistantTurn;

export interface ChatViewState {
  sessionId: string | null;
  messages: Turn[];
  pending: boolean;
  followupChips: string[];
  citationPanel: Citation | null;
  /** "network" shows a retry affordance, "empty-store" an upload prompt */
  error: { kind: "network" | "empty-store" | "service"; message: string } | null;
  lastFailedText: string | null;
}

export type Listener = (state: ChatViewState) => void;

export class ChatStore {
  private state: ChatViewState = {
    sessionId: null,
    messages: [],
    pending: false,
    followupChips: [],
    citationPanel: null,
    error: null,
    lastFailedText: null,
  };
  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  getState(): ChatViewState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private set(partial: Partial<ChatViewState>): void {
    this.state = { ...this.state, ...partial };
    for (const listener of this.listeners) listener(this.state);
  }

  async sendTurn(text: string): Promise<void> {
    const trimmed = text.trim();
    if (!trimmed || this.state.pending) return;
    this.set({ pending: true, error: null, citationPanel: null });
    try {
      const response = await this.api.chat(
        trimmed,
        this.state.sessionId ?? undefined,
      );
      const { session_id, ...envelope } = response;
      this.set({
        sessionId: session_id,
        messages: [
          ...this.state.messages,
          { role: "user", text: trimmed },
          { role: "assistant", envelope },
        ],
        followupChips: envelope.followups.slice(0, 3),
        pending: false,
        lastFailedText: null,
      });
    } catch (err) {
      if (err instanceof ServiceError) {
        const kind = err.status === 503 ? "empty-store" : "service";
        this.set({
          pending: false,
          error: { kind, message: err.message },
          lastFailedText: trimmed,
        });
      } else {
        this.set({
          pending: false,
          error: { kind: "network", message: String(err) },
          lastFailedText: trimmed,
        });
      }
    }
  }

  /** A follow-up chip submits its text as the next turn, verbatim. */
  async clickFollowup(chipText: string): Promise<void> {
    await this.sendTurn(chipText);
  }

  async retry(): Promise<void> {
    const text = this.state.lastFailedText;
    if (text) await this.sendTurn(text);
  }

  openCitation(citation: Citation): void {
    this.set({ citationPanel: citation });
  }

  closeCitation(): void {
    this.set({ citationPanel: null });
  }
}
