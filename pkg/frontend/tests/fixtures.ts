/** Shared test data: a finished exploration's event log, as the service
 * streams it, plus a tiny deterministic rng for property tests. */

import type { EventEnvelope } from "../src/api.js";

const TS = "2026-08-16T12:00:00.000+00:00";

export function canonicalEvents(): EventEnvelope[] {
  return [
    {
      seq: 1,
      ts: TS,
      kind: "AgentMessage",
      payload: {
        text: "Session opened on design counter8. Commands: /optimize [goal...] start an exploration; /status show session state.",
        design: "counter8",
        config: {
          max_iterations: 3,
          repair_attempts: 2,
          objective: { primary_class: "LUT", secondary_class: "FF", weights: null },
          require_improvement: true,
        },
      },
    },
    { seq: 2, ts: TS, kind: "UserMessage", payload: { text: "/optimize" } },
    {
      seq: 3,
      ts: TS,
      kind: "VerificationResult",
      payload: {
        variant_id: 0,
        status: "Pass",
        matched_rule: null,
        log_excerpt: "all tests passed",
      },
    },
    {
      seq: 4,
      ts: TS,
      kind: "MetricsMeasured",
      payload: { variant_id: 0, counts: { FF: 10, LUT: 100 } },
    },
    {
      seq: 5,
      ts: TS,
      kind: "PlanCreated",
      payload: {
        iteration: 1,
        plan_id: 1,
        steps: [
          "Fold the enable into the adder operand so the mux in front of the register disappears.",
          "Let the carry chain absorb the increment instead of a separate adder plus enable mux.",
        ],
        rationale: "The enable mux duplicates logic the carry chain can absorb.",
        stop: false,
      },
    },
    {
      seq: 6,
      ts: TS,
      kind: "CandidateProduced",
      payload: { variant_id: 1, iteration: 1, attempt: 1 },
    },
    {
      seq: 7,
      ts: TS,
      kind: "VerificationResult",
      payload: {
        variant_id: 1,
        status: "Pass",
        matched_rule: null,
        log_excerpt: "all tests passed",
      },
    },
    {
      seq: 8,
      ts: TS,
      kind: "MetricsMeasured",
      payload: { variant_id: 1, counts: { FF: 6, LUT: 52 } },
    },
    {
      seq: 9,
      ts: TS,
      kind: "BestUpdated",
      payload: { variant_id: 1, reductions: { FF: 40.0, LUT: 48.0 } },
    },
    {
      seq: 10,
      ts: TS,
      kind: "PlanCreated",
      payload: {
        iteration: 2,
        plan_id: 2,
        steps: [],
        rationale: "Another rewrite round would not reduce LUT or FF usage.",
        stop: true,
      },
    },
    {
      seq: 11,
      ts: TS,
      kind: "AgentMessage",
      payload: { text: "Exploration finished: best is variant 1 (FF -40.0%, LUT -48.0%)." },
    },
    {
      seq: 12,
      ts: TS,
      kind: "LoopFinished",
      payload: {
        best_variant_id: 1,
        reductions: { FF: 40.0, LUT: 48.0 },
        stopped_early: true,
        iterations: 2,
      },
    },
  ];
}

export function event(seq: number, kind = "AgentMessage", payload: Record<string, unknown> = { text: `event ${seq}` }): EventEnvelope {
  return { seq, ts: TS, kind, payload };
}

/** mulberry32: small seeded generator so property tests replay exactly. */
export function makeRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randInt(rng: () => number, lo: number, hi: number): number {
  return lo + Math.floor(rng() * (hi - lo + 1));
}
