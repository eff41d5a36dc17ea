/** Reconnecting consumer that feeds the event buffer and one dispatch queue. */

import type { EventEnvelope } from "./api.js";
import type { EventBuffer } from "./events.js";

/** The slice of the API client the consumer needs. */
export interface EventStreamSource {
  streamEvents(
    sessionId: string,
    since: number,
    signal?: AbortSignal,
  ): AsyncGenerator<EventEnvelope>;
}

export type StreamStatus = "connected" | "reconnecting" | "stopped";

export interface ConsumerOptions {
  /** Called for each newly accepted event, strictly in seq order. */
  onEvent: (event: EventEnvelope) => void | Promise<void>;
  onStatus?: (status: StreamStatus) => void;
  onError?: (err: unknown) => void;
  /** Stop cleanly once an accepted event satisfies this. */
  stopWhen?: (event: EventEnvelope) => boolean;
  /** Delay before a reconnect attempt, milliseconds. */
  retryDelayMs?: number;
}


/**
 * One consumer per view. The server keeps the stream open with heartbeat
 * comments, so a closed or failed connection is treated as a drop: we
 * flag "reconnecting" and resume from the buffer cursor. Duplicate events
 * after a resume are dropped by the buffer; a gap forces a fresh connect
 * from the cursor rather than ever rendering out of order.
 */
export class EventStreamConsumer {
  private running = false;
  private controller: AbortController | null = null;
  private wake: (() => void) | null = null;
  private queue: Promise<void> = Promise.resolve();
  private done: Promise<void> = Promise.resolve();

  constructor(
    private readonly api: EventStreamSource,
    private readonly sessionId: string,
    private readonly buffer: EventBuffer,
    private readonly opts: ConsumerOptions,
  ) {}

  start(): void {
    if (this.running) return;
    this.running = true;
    this.done = this.run();
  }

  async stop(): Promise<void> {
    this.running = false;
    this.wake?.();
    this.controller?.abort();
    await this.done.catch(() => undefined);
    await this.queue.catch(() => undefined);
  }

  /** Resolves when the consumer halts (stopWhen hit or stop() called). */
  wait(): Promise<void> {
    return this.done;
  }

  private dispatch(event: EventEnvelope): void {
    this.queue = this.queue
      .then(() => this.opts.onEvent(event))
      .catch((err) => this.opts.onError?.(err));
  }

  /** Sleep that stop() can cut short. */
  private pause(ms: number): Promise<void> {
    return new Promise<void>((resolve) => {
      const timer = setTimeout(() => {
        this.wake = null;
        resolve();
      }, ms);
      this.wake = () => {
        clearTimeout(timer);
        this.wake = null;
        resolve();
      };
    });
  }

  private async run(): Promise<void> {
    const retryDelay = this.opts.retryDelayMs ?? 1000;
    let firstAttempt = true;
    while (this.running) {
      if (!firstAttempt) {
        this.opts.onStatus?.("reconnecting");
        await this.pause(retryDelay);
        if (!this.running) break;
      }
      firstAttempt = false;
      this.controller = new AbortController();
      try {
        const stream = this.api.streamEvents(
          this.sessionId,
          this.buffer.cursor,
          this.controller.signal,
        );
        this.opts.onStatus?.("connected");
        for await (const event of stream) {
          const outcome = this.buffer.insert(event);
          if (outcome === "gap") break; // reconnect from cursor
          if (outcome === "duplicate") continue;
          this.dispatch(event);
          if (this.opts.stopWhen?.(event)) {
            this.running = false;
            break;
          }
        }
      } catch (err) {
        if (this.running) this.opts.onError?.(err);
      } finally {
        this.controller.abort();
        this.controller = null;
      }
    }
    await this.queue.catch(() => undefined);
    this.opts.onStatus?.("stopped");
  }
}
