/** DOM rendering for the session view. All content goes through
 * textContent, never markup strings. */

import type { DiffLine } from "./diff.js";
import type { StreamStatus } from "./stream.js";
import type { CandidateCell, IterationLane, ViewState } from "./viewmodel.js";
import { bestBadge, formatReduction, lastError, seriesClasses } from "./viewmodel.js";

export interface SourceView {
  variantId: number;
  diff: DiffLine[];
  added: number;
  removed: number;
}

export interface UiState {
  streamStatus: StreamStatus;
  toast: string | null;
  canRetry: boolean;
  sending: boolean;
  sourceView: SourceView | null;
}

export interface Handlers {
  onSend(text: string): void;
  onPalette(command: string): void;
  onRetry(): void;
  onDismissToast(): void;
  onVariantClick(variantId: number): void;
  onCloseSource(): void;
  onAcceptVariant(variantId: number): void;
}

type Child = Node | string | null | undefined;

function el(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: Child[]
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  for (const child of children) {
    if (child === null || child === undefined) continue;
    node.append(child);
  }
  return node;
}

function button(label: string, cls: string, onClick: () => void): HTMLElement {
  const b = el("button", { class: cls, type: "button" }, label);
  b.addEventListener("click", onClick);
  return b;
}

// -- header

function renderHeader(vm: ViewState, ui: UiState): HTMLElement {
  const statePill = el("span", { class: `pill state-${vm.state.toLowerCase()}` }, vm.state);
  const badge = bestBadge(vm, "LUT");
  const header = el(
    "header",
    { class: "topbar" },
    el("h1", {}, vm.designName ?? "cradle"),
    statePill,
    badge ? el("span", { class: "pill best-badge", "data-role": "best-badge" }, badge) : null,
  );
  if (ui.streamStatus === "reconnecting") {
    header.append(el("span", { class: "pill reconnecting" }, "reconnecting…"));
  }
  return header;
}

// -- chat panel

const PALETTE = ["/optimize", "/status", "/accept", "/abort"];

function renderTranscript(vm: ViewState): HTMLElement {
  const list = el("div", { class: "transcript", "data-role": "transcript" });
  for (const entry of vm.transcript) {
    list.append(
      el(
        "div",
        { class: `msg msg-${entry.role}`, "data-seq": String(entry.seq) },
        el("span", { class: "who" }, entry.role === "user" ? "you" : "agent"),
        el("span", { class: "text" }, entry.text),
      ),
    );
  }
  return list;
}

function renderChat(vm: ViewState, ui: UiState, handlers: Handlers): HTMLElement {
  const input = el("input", {
    class: "chat-input",
    type: "text",
    placeholder: "message or /command",
    "data-role": "chat-input",
  }) as HTMLInputElement;
  const send = () => {
    handlers.onSend(input.value);
    input.value = "";
  };
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") send();
  });
  const sendBtn = button("send", "send-btn", send);
  if (ui.sending) sendBtn.setAttribute("disabled", "disabled");

  const palette = el("div", { class: "palette" });
  for (const cmd of PALETTE) {
    palette.append(
      button(cmd, "palette-btn", () => {
        if (cmd === "/accept") {
          // needs a variant id, so stage it instead of firing blind
          input.value = "/accept ";
          input.focus();
        } else {
          handlers.onPalette(cmd);
        }
      }),
    );
  }

  const panel = el(
    "section",
    { class: "chat" },
    el("h2", {}, "conversation"),
    renderTranscript(vm),
    palette,
    el("div", { class: "composer" }, input, sendBtn),
  );
  if (ui.toast !== null) {
    const toast = el("div", { class: "toast", role: "alert" }, ui.toast);
    if (ui.canRetry) toast.append(button("retry", "retry-btn", handlers.onRetry));
    toast.append(button("×", "dismiss-btn", handlers.onDismissToast));
    panel.append(toast);
  }
  return panel;
}

// -- iteration timeline

function verdictChip(cell: CandidateCell): HTMLElement {
  if (!cell.verdict) return el("span", { class: "chip chip-pending" }, "verifying…");
  const v = cell.verdict;
  const cls = v.passed ? "chip chip-pass" : "chip chip-fail";
  const chip = el("span", { class: cls, tabindex: "0" }, v.status);
  if (!v.passed && v.excerpt) {
    // log excerpt shows on hover/focus
    chip.append(el("span", { class: "popover" }, el("pre", {}, v.excerpt)));
  }
  return chip;
}

function candidateRow(cell: CandidateCell, handlers: Handlers): HTMLElement {
  const label = button(`variant ${cell.variantId}`, "variant-link", () =>
    handlers.onVariantClick(cell.variantId),
  );
  const row = el(
    "div",
    { class: "cand", "data-variant": String(cell.variantId) },
    label,
    el("span", { class: "chip chip-attempt" }, `attempt ${cell.attempt}`),
    verdictChip(cell),
  );
  if (cell.counts) {
    const text = Object.entries(cell.counts)
      .map(([cls, n]) => `${cls} ${n}`)
      .join(", ");
    row.append(el("span", { class: "chip chip-metrics" }, text));
  }
  if (cell.becameBest) row.append(el("span", { class: "chip chip-best" }, "best"));
  return row;
}

function renderLane(lane: IterationLane, handlers: Handlers): HTMLElement {
  const box = el(
    "div",
    { class: "lane", "data-iteration": String(lane.iteration) },
    el("h3", {}, `iteration ${lane.iteration}`),
  );
  if (lane.plan) {
    const plan = el("div", { class: "plan" });
    if (lane.plan.stop) {
      plan.append(el("div", { class: "plan-stop" }, "no further optimization"));
    }
    const steps = el("ol", { class: "plan-steps" });
    for (const step of lane.plan.steps) steps.append(el("li", {}, step));
    plan.append(steps);
    if (lane.plan.rationale) {
      plan.append(el("div", { class: "plan-rationale" }, lane.plan.rationale));
    }
    box.append(plan);
  }
  for (const cell of lane.candidates) box.append(candidateRow(cell, handlers));
  return box;
}

function renderTimeline(vm: ViewState, handlers: Handlers): HTMLElement {
  const section = el("section", { class: "timeline" }, el("h2", {}, "iterations"));
  if (!vm.lanes.length) {
    section.append(el("p", { class: "empty" }, "no iterations yet"));
  }
  for (const lane of vm.lanes) section.append(renderLane(lane, handlers));
  return section;
}

// -- metrics chart

function renderChart(vm: ViewState): HTMLElement {
  const section = el("section", { class: "chart" }, el("h2", {}, "resources"));
  if (!vm.series.length) {
    section.append(el("p", { class: "empty" }, "nothing measured yet"));
    return section;
  }
  for (const cls of seriesClasses(vm)) {
    const group = el("div", { class: "chart-group", "data-class": cls }, el("h3", {}, cls));
    const max = Math.max(1, ...vm.series.map((s) => s.counts[cls] ?? 0));
    for (const entry of vm.series) {
      const count = entry.counts[cls] ?? 0;
      const isRef = entry.variantId === 0;
      const isBest = vm.best !== null && entry.variantId === vm.best.variantId;
      const bar = el("div", {
        class: `bar${isRef ? " bar-ref" : ""}${isBest ? " bar-best" : ""}`,
        style: `width: ${((100 * count) / max).toFixed(1)}%`,
      });
      const name = isRef ? "reference" : `variant ${entry.variantId}`;
      const labelBits = [`${name}: ${count}`];
      if (isBest && vm.best && typeof vm.best.reductions[cls] === "number") {
        labelBits.push(formatReduction(vm.best.reductions[cls]));
      }
      group.append(
        el(
          "div",
          { class: "bar-row", "data-variant": String(entry.variantId) },
          el("span", { class: "bar-label" }, labelBits.join("  ")),
          el("div", { class: "bar-track" }, bar),
        ),
      );
    }
    section.append(group);
  }
  return section;
}

// -- variant source overlay

function renderSourceView(ui: UiState, handlers: Handlers): HTMLElement | null {
  const view = ui.sourceView;
  if (!view) return null;
  const body = el("div", { class: "diff" });
  for (const line of view.diff) {
    const mark = line.kind === "add" ? "+" : line.kind === "del" ? "−" : " ";
    body.append(
      el("div", { class: `diff-line diff-${line.kind}` }, `${mark} ${line.text}`),
    );
  }
  return el(
    "div",
    { class: "overlay" },
    el(
      "div",
      { class: "source-view" },
      el(
        "div",
        { class: "source-head" },
        el("h2", {}, `variant ${view.variantId} vs reference`),
        el("span", { class: "diff-stats" }, `+${view.added} −${view.removed}`),
        button("accept this variant", "accept-btn", () =>
          handlers.onAcceptVariant(view.variantId),
        ),
        button("close", "close-btn", handlers.onCloseSource),
      ),
      body,
    ),
  );
}

// -- errors

function renderErrors(vm: ViewState): HTMLElement | null {
  const err = lastError(vm);
  if (!err) return null;
  return el(
    "div",
    { class: "loop-error" },
    el("span", { class: "chip chip-fail" }, err.scope || "error"),
    el("span", {}, err.message),
  );
}

/**
 * Full re-render of the session view. The chat input survives across
 * renders (its text and focus are restored) so live events never eat a
 * half-typed message.
 */
export function renderApp(
  root: HTMLElement,
  vm: ViewState,
  ui: UiState,
  handlers: Handlers,
): void {
  const prevInput = root.querySelector<HTMLInputElement>("[data-role=chat-input]");
  const typed = prevInput?.value ?? "";
  const hadFocus = prevInput !== null && document.activeElement === prevInput;

  root.replaceChildren(
    renderHeader(vm, ui),
    el(
      "main",
      { class: "columns" },
      renderChat(vm, ui, handlers),
      el("div", { class: "right" }, renderTimeline(vm, handlers), renderChart(vm)),
    ),
    renderErrors(vm) ?? "",
    renderSourceView(ui, handlers) ?? "",
  );

  const nextInput = root.querySelector<HTMLInputElement>("[data-role=chat-input]");
  if (nextInput) {
    nextInput.value = typed;
    if (hadFocus) nextInput.focus();
  }
  const transcript = root.querySelector("[data-role=transcript]");
  if (transcript) transcript.scrollTop = transcript.scrollHeight;
}
