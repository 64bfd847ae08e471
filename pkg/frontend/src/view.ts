/** DOM rendering. All interactive elements are real <button>s so they
 * are keyboard-activatable without extra wiring. */

import { AnswerEnvelope, Citation, TraceEvent, TraceResponse } from "./api.js";
import { ChatStore, ChatViewState } from "./state.js";
import { checkFusion, fusionFromEvent } from "./trace.js";

export const ABSTAIN_TEXT = "I do not know.";

const MARKER_RE = /\[(\d+)\]/g;

/** Split answer text into plain segments and citation markers; only
 * markers with a backing citation record become links. */
export function renderAnswerText(
  container: HTMLElement,
  text: string,
  citations: Citation[],
  onMarker: (citation: Citation) => void,
): void {
  const byMarker = new Map(citations.map((c) => [c.marker, c]));
  let last = 0;
  for (const match of text.matchAll(MARKER_RE)) {
    const index = match.index ?? 0;
    container.appendChild(
      document.createTextNode(text.slice(last, index)),
    );
    const marker = Number(match[1]);
    const citation = byMarker.get(marker);
    if (citation) {
      const button = document.createElement("button");
      button.type = "button";
      button.className = "marker";
      button.dataset.marker = String(marker);
      const sup = document.createElement("sup");
      sup.textContent = `[${marker}]`;
      button.appendChild(sup);
      button.addEventListener("click", () => onMarker(citation));
      container.appendChild(button);
    } else {
      container.appendChild(document.createTextNode(match[0]));
    }
    last = index + match[0].length;
  }
  container.appendChild(document.createTextNode(text.slice(last)));
}

function renderEnvelope(
  envelope: AnswerEnvelope,
  store: ChatStore,
): HTMLElement {
  const item = document.createElement("div");
  item.className = "turn assistant";
  if (envelope.abstained) {
    const banner = document.createElement("div");
    banner.className = "abstention";
    banner.setAttribute("role", "status");
    banner.textContent = envelope.condensed;
    item.appendChild(banner);
    return item;
  }
  const body = document.createElement("p");
  body.className = "answer";
  renderAnswerText(body, envelope.condensed, envelope.citations, (c) =>
    store.openCitation(c),
  );
  item.appendChild(body);
  return item;
}

function renderCitationPanel(citation: Citation, store: ChatStore): HTMLElement {
  const panel = document.createElement("aside");
  panel.className = "citation-panel";
  const title = document.createElement("h3");
  title.className = "doc-title";
  title.textContent = citation.doc_title;
  const section = document.createElement("p");
  section.className = "section-path";
  section.textContent = citation.section_path.join(" > ");
  const page = document.createElement("p");
  page.className = "page";
  page.textContent = citation.page === null ? "" : `p.${citation.page}`;
  const close = document.createElement("button");
  close.type = "button";
  close.className = "close-panel";
  close.textContent = "Close";
  close.addEventListener("click", () => store.closeCitation());
  panel.append(title, section, page, close);
  return panel;
}

function renderError(
  state: ChatViewState,
  store: ChatStore,
): HTMLElement {
  const banner = document.createElement("div");
  banner.setAttribute("role", "alert");
  if (state.error!.kind === "empty-store") {
    banner.className = "banner empty-store";
    banner.textContent =
      "No documents ingested yet. Upload documentation to start asking questions.";
  } else {
    banner.className =
      state.error!.kind === "network" ? "banner network" : "banner service";
    banner.textContent = state.error!.message;
    const retry = document.createElement("button");
    retry.type = "button";
    retry.className = "retry";
    retry.textContent = "Retry";
    retry.addEventListener("click", () => void store.retry());
    banner.appendChild(retry);
  }
  return banner;
}

export function renderChat(root: HTMLElement, store: ChatStore): void {
  const state = store.getState();
  root.textContent = "";

  const log = document.createElement("div");
  log.className = "messages";
  for (const turn of state.messages) {
    if (turn.role === "user") {
      const item = document.createElement("div");
      item.className = "turn user";
      item.textContent = turn.text;
      log.appendChild(item);
    } else {
      log.appendChild(renderEnvelope(turn.envelope, store));
    }
  }
  root.appendChild(log);

  if (state.error) root.appendChild(renderError(state, store));
  if (state.citationPanel) {
    root.appendChild(renderCitationPanel(state.citationPanel, store));
  }

  const chips = document.createElement("div");
  chips.className = "followups";
  for (const text of state.followupChips) {
    const chip = document.createElement("button");
    chip.type = "button";
    chip.className = "chip";
    chip.textContent = text;
    chip.disabled = state.pending;
    chip.addEventListener("click", () => void store.clickFollowup(text));
    chips.appendChild(chip);
  }
  root.appendChild(chips);

  const form = document.createElement("form");
  form.className = "composer";
  const input = document.createElement("input");
  input.type = "text";
  input.name = "query";
  input.disabled = state.pending;
  const submit = document.createElement("button");
  submit.type = "submit";
  submit.textContent = "Send";
  submit.disabled = state.pending;
  form.append(input, submit);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value;
    input.value = "";
    void store.sendTurn(text);
  });
  root.appendChild(form);
}

export function renderTrace(root: HTMLElement, trace: TraceResponse): void {
  root.textContent = "";
  const list = document.createElement("ol");
  list.className = "trace-steps";
  for (const event of trace.events) {
    list.appendChild(renderTraceStep(event));
  }
  root.appendChild(list);
}

function renderTraceStep(event: TraceEvent): HTMLElement {
  const item = document.createElement("li");
  item.className = `trace-step step-${event.step}`;
  const name = document.createElement("span");
  name.className = "step-name";
  name.textContent = event.step;
  const duration = document.createElement("span");
  duration.className = "duration";
  duration.textContent = `${event.duration_ms.toFixed(1)} ms`;
  item.append(name, duration);

  const fusion = event.step === "fuse" ? fusionFromEvent(event) : null;
  if (fusion) {
    const detail = document.createElement("span");
    detail.className = "fusion-detail";
    detail.textContent =
      `alpha=${fusion.alpha} max_chunk_sim=${fusion.max_chunk_sim} ` +
      `graph_relevance=${fusion.graph_relevance} value=${fusion.value}`;
    item.appendChild(detail);
    const check = checkFusion(fusion);
    if (check.mismatch) {
      const flag = document.createElement("span");
      flag.className = "fusion-mismatch";
      flag.setAttribute("role", "alert");
      flag.textContent =
        `fusion mismatch: recorded ${check.recorded}, ` +
        `recomputed ${check.recomputed}`;
      item.appendChild(flag);
    }
  }
  return item;
}

export function renderTraceNotFound(root: HTMLElement, traceId: string): void {
  root.textContent = "";
  const notice = document.createElement("p");
  notice.className = "trace-missing";
  notice.textContent = `No trace found for ${traceId}.`;
  root.appendChild(notice);
}
