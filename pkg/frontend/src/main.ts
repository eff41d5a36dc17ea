/** Browser entry point: session bootstrap and event wiring. */

import { ApiClient, ApiError, freshDedupeId, normalizeOutgoing } from "./api.js";
import { diffLines, diffStats } from "./diff.js";
import { EventBuffer } from "./events.js";
import { renderApp, type Handlers, type UiState } from "./render.js";
import { EventStreamConsumer } from "./stream.js";
import { applyEvent, emptyView, type ViewState } from "./viewmodel.js";

const api = new ApiClient("");

function sessionIdFromHash(): string | null {
  const m = /#session=([A-Za-z0-9_-]+)/.exec(location.hash);
  return m ? m[1] : null;
}

async function pickDesign(root: HTMLElement): Promise<string> {
  const designs = await api.listDesigns();
  return new Promise((resolve) => {
    const list = document.createElement("div");
    list.className = "design-picker";
    const title = document.createElement("h1");
    title.textContent = "pick a design";
    list.append(title);
    for (const d of designs) {
      const btn = document.createElement("button");
      btn.className = "design-btn";
      btn.textContent = d.error ? `${d.name} (broken: ${d.error})` : d.name;
      if (d.error) btn.disabled = true;
      else btn.addEventListener("click", () => resolve(d.name));
      list.append(btn);
    }
    root.replaceChildren(list);
  });
}

interface PendingSend {
  text: string;
  dedupeId: string;
}

async function runSessionView(root: HTMLElement, sessionId: string): Promise<void> {
  const vm: ViewState = emptyView();
  const buffer = new EventBuffer();
  const ui: UiState = {
    streamStatus: "connected",
    toast: null,
    canRetry: false,
    sending: false,
    sourceView: null,
  };
  let pendingRetry: PendingSend | null = null;

  const rerender = () => renderApp(root, vm, ui, handlers);

  const deliver = async (pending: PendingSend) => {
    ui.sending = true;
    ui.toast = null;
    ui.canRetry = false;
    rerender();
    try {
      await api.postMessage(sessionId, pending.text, pending.dedupeId);
      pendingRetry = null;
    } catch (err) {
      // keep the dedupe id so a retry cannot double-apply
      pendingRetry = pending;
      ui.toast = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      ui.canRetry = true;
    } finally {
      ui.sending = false;
      rerender();
    }
  };

  const handlers: Handlers = {
    onSend(text) {
      const message = normalizeOutgoing(text);
      if (message === null) return;
      void deliver({ text: message, dedupeId: freshDedupeId() });
    },
    onPalette(command) {
      void deliver({ text: command, dedupeId: freshDedupeId() });
    },
    onRetry() {
      if (pendingRetry) void deliver(pendingRetry);
    },
    onDismissToast() {
      ui.toast = null;
      ui.canRetry = false;
      rerender();
    },
    onVariantClick(variantId) {
      void (async () => {
        try {
          const [reference, variant] = await Promise.all([
            api.variantSource(sessionId, 0),
            api.variantSource(sessionId, variantId),
          ]);
          const diff = diffLines(reference, variant);
          const { added, removed } = diffStats(diff);
          ui.sourceView = { variantId, diff, added, removed };
        } catch (err) {
          ui.toast = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
          ui.canRetry = false;
        }
        rerender();
      })();
    },
    onCloseSource() {
      ui.sourceView = null;
      rerender();
    },
    onAcceptVariant(variantId) {
      ui.sourceView = null;
      void deliver({ text: `/accept ${variantId}`, dedupeId: freshDedupeId() });
    },
  };

  const consumer = new EventStreamConsumer(api, sessionId, buffer, {
    onEvent(event) {
      applyEvent(vm, event);
      rerender();
    },
    onStatus(status) {
      ui.streamStatus = status;
      rerender();
    },
    onError() {
      // transient; the reconnecting pill already tells the story
    },
  });
  rerender();
  consumer.start();
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  let sessionId = sessionIdFromHash();
  if (sessionId) {
    try {
      await api.getSession(sessionId);
    } catch {
      sessionId = null;
      location.hash = "";
    }
  }
  if (!sessionId) {
    const design = await pickDesign(root);
    const created = await api.createSession(design);
    sessionId = created.id;
    location.hash = `#session=${sessionId}`;
  }
  await runSessionView(root, sessionId);
}

boot().catch((err) => {
  const root = document.getElementById("app");
  if (root) {
    const msg = document.createElement("p");
    msg.className = "boot-error";
    msg.textContent = `failed to start: ${String(err)}`;
    root.replaceChildren(msg);
  }
});
