/** Typed client for the cradle HTTP API. Pure fetch wrappers, no UI state. */

export interface EventEnvelope {
  seq: number;
  ts: string;
  kind: string;
  payload: Record<string, unknown>;
}

export interface DesignEntry {
  name: string;
  top?: string;
  error?: string;
}

export interface SessionDoc {
  id: string;
  state: string;
  design: string;
  config: Record<string, unknown>;
  best?: { variant_id: number; reductions: Record<string, number> };
}

export interface VariantEntry {
  id: number;
  iteration: number;
  verdict: string;
  metrics?: Record<string, number>;
  reductions?: Record<string, number>;
}

/** Error body the service sends with every non-2xx response. */
export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function raiseFor(resp: Response): Promise<never> {
  let code = "HttpError";
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const doc = await resp.json();
    if (doc && typeof doc.code === "string") code = doc.code;
    if (doc && typeof doc.message === "string") message = doc.message;
  } catch {
    // non-JSON error body, keep the status line
  }
  throw new ApiError(resp.status, code, message);
}

async function getJson<T>(fetchImpl: FetchLike, url: string): Promise<T> {
  const resp = await fetchImpl(url);
  if (!resp.ok) await raiseFor(resp);
  return (await resp.json()) as T;
}

async function postJson<T>(fetchImpl: FetchLike, url: string, body: unknown): Promise<T> {
  const resp = await fetchImpl(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) await raiseFor(resp);
  return (await resp.json()) as T;
}

export class ApiClient {
  readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(base = "", fetchImpl?: FetchLike) {
    this.base = base.replace(/\/$/, "");
    // bind so the client works when fetch is the global
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  listDesigns(): Promise<DesignEntry[]> {
    return getJson(this.fetchImpl, `${this.base}/api/designs`);
  }

  createSession(design: string): Promise<{ id: string; state: string }> {
    return postJson(this.fetchImpl, `${this.base}/api/sessions`, { design });
  }

  getSession(id: string): Promise<SessionDoc> {
    return getJson(this.fetchImpl, `${this.base}/api/sessions/${id}`);
  }

  postMessage(
    id: string,
    text: string,
    dedupeId: string,
  ): Promise<{ accepted_seq: number | null }> {
    return postJson(this.fetchImpl, `${this.base}/api/sessions/${id}/messages`, {
      text,
      dedupe_id: dedupeId,
    });
  }

  listVariants(id: string): Promise<VariantEntry[]> {
    return getJson(this.fetchImpl, `${this.base}/api/sessions/${id}/variants`);
  }

  async variantSource(id: string, variantId: number): Promise<string> {
    const resp = await this.fetchImpl(
      `${this.base}/api/sessions/${id}/variants/${variantId}/source`,
    );
    if (!resp.ok) await raiseFor(resp);
    return resp.text();
  }

  /**
   * Consume the ndjson event stream. Yields envelopes until the server
   * closes the stream or `signal` aborts; heartbeat comment lines are
   * swallowed here so callers only ever see events.
   */
  async *streamEvents(
    id: string,
    since = 0,
    signal?: AbortSignal,
  ): AsyncGenerator<EventEnvelope> {
    const url = `${this.base}/api/sessions/${id}/events?since=${since}`;
    const resp = await this.fetchImpl(url, { signal });
    if (!resp.ok) await raiseFor(resp);
    if (!resp.body) throw new ApiError(resp.status, "NoBody", "stream has no body");
    yield* parseEventLines(resp.body);
  }
}

/** Split a byte stream into ndjson envelopes, skipping heartbeats and blanks. */
export async function* parseEventLines(
  body: ReadableStream<Uint8Array>,
): AsyncGenerator<EventEnvelope> {
  const reader = body.getReader();
  const decoder = new TextDecoder("utf-8");
  let buffered = "";
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffered += decoder.decode(value, { stream: true });
      let nl: number;
      while ((nl = buffered.indexOf("\n")) >= 0) {
        const line = buffered.slice(0, nl).trim();
        buffered = buffered.slice(nl + 1);
        if (!line || line.startsWith("#")) continue;
        yield JSON.parse(line) as EventEnvelope;
      }
    }
    const tail = buffered.trim();
    if (tail && !tail.startsWith("#")) yield JSON.parse(tail) as EventEnvelope;
  } finally {
    reader.releaseLock();
  }
}

/** One id per user message; reused verbatim when a send is retried. */
export function freshDedupeId(): string {
  const c = globalThis.crypto;
  if (c && typeof c.randomUUID === "function") return c.randomUUID();
  return `dd-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;
}

/**
 * Client-side gate for outgoing chat text. Returns the trimmed message,
 * or null when there is nothing worth a request.
 */
export function normalizeOutgoing(text: string): string | null {
  const trimmed = text.trim();
  return trimmed === "" ? null : trimmed;
}
