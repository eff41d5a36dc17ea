/**
 * Pure fold from the session event stream to everything the UI draws.
 *
 * The state here is plain JSON data: no DOM, no network, no class
 * instances. A view rebuilt from /events?since=0 must deep-equal the one
 * accumulated live, so every derivation happens in applyEvent and nowhere
 * else. Reductions shown to the user come verbatim from BestUpdated /
 * LoopFinished payloads; the client never recomputes them from counts.
 */

import type { EventEnvelope } from "./api.js";

export interface TranscriptEntry {
  seq: number;
  role: "user" | "agent";
  text: string;
}

export interface VerdictInfo {
  status: string;
  passed: boolean;
  excerpt: string;
  matchedRule: string | null;
}

export interface CandidateCell {
  variantId: number;
  attempt: number;
  verdict: VerdictInfo | null;
  counts: Record<string, number> | null;
  becameBest: boolean;
}

export interface IterationLane {
  iteration: number;
  plan: {
    steps: string[];
    rationale: string;
    stop: boolean;
    focusModule: string | null;
  } | null;
  candidates: CandidateCell[];
}

export interface SeriesEntry {
  variantId: number;
  counts: Record<string, number>;
}

export interface ErrorEntry {
  seq: number;
  scope: string;
  message: string;
}

export interface FinishedInfo {
  bestVariantId: number;
  reductions: Record<string, number>;
  stoppedEarly: boolean;
  iterations: number;
  aborted: string | null;
}

export interface ViewState {
  designName: string | null;
  config: Record<string, unknown> | null;
  state: "Idle" | "Exploring" | "Finished";
  transcript: TranscriptEntry[];
  lanes: IterationLane[];
  /** Bars for the chart, in measurement order; variant 0 is the reference. */
  series: SeriesEntry[];
  best: { variantId: number; reductions: Record<string, number> } | null;
  finished: FinishedInfo | null;
  errors: ErrorEntry[];
  lastSeq: number;
}

export function emptyView(): ViewState {
  return {
    designName: null,
    config: null,
    state: "Idle",
    transcript: [],
    lanes: [],
    series: [],
    best: null,
    finished: null,
    errors: [],
    lastSeq: 0,
  };
}

function laneFor(vm: ViewState, iteration: number): IterationLane {
  let lane = vm.lanes.find((l) => l.iteration === iteration);
  if (!lane) {
    lane = { iteration, plan: null, candidates: [] };
    vm.lanes.push(lane);
    vm.lanes.sort((a, b) => a.iteration - b.iteration);
  }
  return lane;
}

function cellFor(vm: ViewState, variantId: number): CandidateCell | null {
  for (const lane of vm.lanes) {
    for (const cell of lane.candidates) {
      if (cell.variantId === variantId) return cell;
    }
  }
  return null;
}

/** Apply one event in place and return the same view. Unknown kinds are skipped. */
export function applyEvent(vm: ViewState, event: EventEnvelope): ViewState {
  const p = event.payload ?? {};
  switch (event.kind) {
    case "UserMessage": {
      const text = String(p.text ?? "");
      vm.transcript.push({ seq: event.seq, role: "user", text });
      if (text.trim().split(/\s+/)[0] === "/optimize") vm.state = "Exploring";
      break;
    }
    case "AgentMessage": {
      vm.transcript.push({ seq: event.seq, role: "agent", text: String(p.text ?? "") });
      if (vm.designName === null && typeof p.design === "string") vm.designName = p.design;
      if (vm.config === null && p.config && typeof p.config === "object") {
        vm.config = p.config as Record<string, unknown>;
      }
      break;
    }
    case "PlanCreated": {
      const lane = laneFor(vm, Number(p.iteration));
      lane.plan = {
        steps: Array.isArray(p.steps) ? p.steps.map(String) : [],
        rationale: String(p.rationale ?? ""),
        stop: Boolean(p.stop),
        focusModule: typeof p.focus_module === "string" ? p.focus_module : null,
      };
      break;
    }
    case "CandidateProduced": {
      const lane = laneFor(vm, Number(p.iteration));
      lane.candidates.push({
        variantId: Number(p.variant_id),
        attempt: Number(p.attempt ?? 1),
        verdict: null,
        counts: null,
        becameBest: false,
      });
      break;
    }
    case "VerificationResult": {
      const vid = Number(p.variant_id);
      const info: VerdictInfo = {
        status: String(p.status ?? ""),
        passed: p.status === "Pass",
        excerpt: String(p.log_excerpt ?? ""),
        matchedRule: typeof p.matched_rule === "string" ? p.matched_rule : null,
      };
      const cell = cellFor(vm, vid);
      if (cell) cell.verdict = info;
      break;
    }
    case "MetricsMeasured": {
      const vid = Number(p.variant_id);
      const counts = (p.counts ?? {}) as Record<string, number>;
      vm.series.push({ variantId: vid, counts: { ...counts } });
      const cell = cellFor(vm, vid);
      if (cell) cell.counts = { ...counts };
      break;
    }
    case "BestUpdated": {
      const vid = Number(p.variant_id);
      vm.best = {
        variantId: vid,
        reductions: { ...((p.reductions ?? {}) as Record<string, number>) },
      };
      for (const lane of vm.lanes) {
        for (const cell of lane.candidates) cell.becameBest = cell.variantId === vid;
      }
      break;
    }
    case "LoopFinished": {
      vm.state = "Finished";
      vm.finished = {
        bestVariantId: Number(p.best_variant_id),
        reductions: { ...((p.reductions ?? {}) as Record<string, number>) },
        stoppedEarly: Boolean(p.stopped_early),
        iterations: Number(p.iterations ?? 0),
        aborted: typeof p.aborted === "string" ? p.aborted : null,
      };
      vm.best = {
        variantId: vm.finished.bestVariantId,
        reductions: vm.finished.reductions,
      };
      break;
    }
    case "Error": {
      vm.errors.push({
        seq: event.seq,
        scope: String(p.scope ?? ""),
        message: String(p.message ?? ""),
      });
      break;
    }
    default:
      break;
  }
  if (event.seq > vm.lastSeq) vm.lastSeq = event.seq;
  return vm;
}

export function foldView(events: readonly EventEnvelope[]): ViewState {
  const vm = emptyView();
  for (const e of events) applyEvent(vm, e);
  return vm;
}

/**
 * Badge text for a reduction straight off the API: a positive reduction
 * means the count went down, shown with a real minus sign.
 */
export function formatReduction(reduction: number): string {
  const magnitude = Math.abs(reduction).toFixed(1);
  return reduction >= 0 ? `−${magnitude}%` : `+${magnitude}%`;
}

/** Badge for the current best, e.g. "−48.0% LUT", or null before any best. */
export function bestBadge(vm: ViewState, resourceClass: string): string | null {
  if (!vm.best) return null;
  const r = vm.best.reductions[resourceClass];
  if (typeof r !== "number") return null;
  return `${formatReduction(r)} ${resourceClass}`;
}

export function lastError(vm: ViewState): ErrorEntry | null {
  return vm.errors.length ? vm.errors[vm.errors.length - 1] : null;
}

/** All resource classes seen in the chart series, reference classes first. */
export function seriesClasses(vm: ViewState): string[] {
  const seen: string[] = [];
  for (const entry of vm.series) {
    for (const cls of Object.keys(entry.counts)) {
      if (!seen.includes(cls)) seen.push(cls);
    }
  }
  return seen;
}
