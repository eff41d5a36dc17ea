/** Ordered, gap-free buffer of session events. */

import type { EventEnvelope } from "./api.js";

export type InsertOutcome = "accepted" | "duplicate" | "gap";

/**
 * Holds the events seen so far, in seq order with no holes. The stream
 * can drop and resume, and a resumed stream may replay events we already
 * hold, so inserts classify rather than throw: duplicates are ignored and
 * a gap tells the caller to reconnect from `cursor`.
 */
export class EventBuffer {
  private readonly events: EventEnvelope[] = [];

  /** Highest contiguous seq held; 0 when empty. Resume with ?since=cursor. */
  get cursor(): number {
    return this.events.length;
  }

  insert(event: EventEnvelope): InsertOutcome {
    if (!Number.isInteger(event.seq) || event.seq < 1) {
      throw new Error(`bad event seq: ${String(event.seq)}`);
    }
    if (event.seq <= this.cursor) return "duplicate";
    if (event.seq !== this.cursor + 1) return "gap";
    this.events.push(event);
    return "accepted";
  }

  all(): readonly EventEnvelope[] {
    return this.events;
  }

  /** Events with seq strictly greater than `seq`. */
  since(seq: number): readonly EventEnvelope[] {
    return this.events.slice(Math.max(seq, 0));
  }
}
