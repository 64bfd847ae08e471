/** Page wiring: chat pane plus an on-demand trace pane. */

import { ApiClient, ServiceError } from "./api.js";
import { ChatStore } from "./state.js";
import { renderChat, renderTrace, renderTraceNotFound } from "./view.js";

export function mount(root: HTMLElement, baseUrl = ""): ChatStore {
  const api = new ApiClient(baseUrl);
  const store = new ChatStore(api);

  const chatRoot = document.createElement("section");
  chatRoot.id = "chat";
  const traceRoot = document.createElement("section");
  traceRoot.id = "trace";
  root.append(chatRoot, traceRoot);

  store.subscribe(() => renderChat(chatRoot, store));
  renderChat(chatRoot, store);

  store.subscribe((state) => {
    const lastTurn = state.messages[state.messages.length - 1];
    if (!lastTurn || lastTurn.role !== "assistant") return;
    const traceId = lastTurn.envelope.trace_id;
    if (!traceId) return;
    api
      .trace(traceId)
      .then((trace) => renderTrace(traceRoot, trace))
      .catch((err) => {
        if (err instanceof ServiceError && err.status === 404) {
          renderTraceNotFound(traceRoot, traceId);
        }
      });
  });

  return store;
}

const appRoot = typeof document !== "undefined"
  ? document.getElementById("app")
  : null;
if (appRoot) mount(appRoot);
