/**
 * Drives the real HTTP service on the bundled replay fixtures: spawn
 * `cradle serve`, open a session from this client, run /optimize, and
 * check what the view layer would draw.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { cpSync, existsSync, mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, freshDedupeId } from "../src/api.js";
import { EventBuffer } from "../src/events.js";
import { EventStreamConsumer } from "../src/stream.js";
import { applyEvent, bestBadge, emptyView, type ViewState } from "../src/viewmodel.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const REPO = path.resolve(HERE, "..", "..");
const REPLAY = path.join(REPO, "fixtures", "replay");
const DIST = path.resolve(HERE, "..", "dist");

let server: ChildProcess;
let workDir: string;
let base: string;
let api: ApiClient;

function startServer(): Promise<string> {
  workDir = mkdtempSync(path.join(tmpdir(), "cradle-ui-"));
  cpSync(path.join(REPO, "fixtures", "workspace"), workDir, { recursive: true });
  server = spawn(
    "python3",
    [
      // unbuffered so the "serving ..." line lands in the pipe right away
      "-u", "-m", "cradle", "serve",
      "--workspace", workDir,
      "--backend", `replay:${REPLAY}`,
      "--port", "0",
      "--static", DIST,
    ],
    { cwd: REPO, stdio: ["ignore", "pipe", "pipe"] },
  );
  return new Promise((resolve, reject) => {
    let out = "";
    let err = "";
    const timer = setTimeout(
      () => reject(new Error(`server did not come up: ${out} ${err}`)),
      15_000,
    );
    server.stdout?.on("data", (chunk: Buffer) => {
      out += chunk.toString();
      const m = /serving workspace .* on (http:\/\/[^\s]+)/.exec(out);
      if (m) {
        clearTimeout(timer);
        resolve(m[1]);
      }
    });
    server.stderr?.on("data", (chunk: Buffer) => {
      err += chunk.toString();
    });
    server.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`server exited early (${code}): ${err}`));
    });
  });
}

beforeAll(async () => {
  expect(
    existsSync(path.join(DIST, "index.html")),
    "dist/ is missing; run `npm run build` first",
  ).toBe(true);
  base = await startServer();
  api = new ApiClient(base);
}, 30_000);

afterAll(() => {
  server?.kill();
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

/** Read the stream from `since` until `lastSeq`, folding a fresh view. */
async function rebuildView(sessionId: string, lastSeq: number): Promise<ViewState> {
  const vm = emptyView();
  const buffer = new EventBuffer();
  for await (const event of api.streamEvents(sessionId, 0)) {
    if (buffer.insert(event) === "accepted") applyEvent(vm, event);
    if (buffer.cursor >= lastSeq) break;
  }
  return vm;
}

describe("web UI against a replay-backed service", () => {
  let sessionId: string;
  let live: ViewState;
  let kinds: string[];

  it("runs /optimize and renders the iteration in event order", async () => {
    const created = await api.createSession("counter8");
    sessionId = created.id;

    live = emptyView();
    const buffer = new EventBuffer();
    const consumer = new EventStreamConsumer(api, sessionId, buffer, {
      onEvent: (event) => {
        applyEvent(live, event);
      },
      stopWhen: (event) => event.kind === "LoopFinished",
      retryDelayMs: 100,
    });
    consumer.start();

    const posted = await api.postMessage(sessionId, "/optimize", freshDedupeId());
    expect(posted.accepted_seq).toBeGreaterThan(0);
    await consumer.wait();

    kinds = buffer.all().map((e) => e.kind);
    const order = [
      kinds.indexOf("PlanCreated"),
      kinds.indexOf("CandidateProduced"),
      kinds.findIndex(
        (k, i) => k === "VerificationResult" && buffer.all()[i].payload.variant_id === 1,
      ),
      kinds.findIndex(
        (k, i) => k === "MetricsMeasured" && buffer.all()[i].payload.variant_id === 1,
      ),
    ];
    expect(order.every((pos) => pos >= 0)).toBe(true);
    expect([...order].sort((a, b) => a - b)).toEqual(order);

    // the lane mirrors that order: plan attached, then the candidate cell
    // with its verdict and counts filled in
    const lane = live.lanes[0];
    expect(lane.plan?.steps.length).toBeGreaterThan(0);
    expect(lane.candidates[0].variantId).toBe(1);
    expect(lane.candidates[0].verdict?.passed).toBe(true);
    expect(lane.candidates[0].counts).toEqual({ FF: 6, LUT: 52 });
    expect(live.state).toBe("Finished");
  }, 30_000);

  it("badges the best variant straight from the API reductions", () => {
    expect(bestBadge(live, "LUT")).toBe("−48.0% LUT");
    expect(bestBadge(live, "FF")).toBe("−40.0% FF");
    expect(live.series).toEqual([
      { variantId: 0, counts: { FF: 10, LUT: 100 } },
      { variantId: 1, counts: { FF: 6, LUT: 52 } },
    ]);
  });

  it("reconstructs the identical view on a hard refresh", async () => {
    const rebuilt = await rebuildView(sessionId, live.lastSeq);
    expect(JSON.stringify(rebuilt)).toBe(JSON.stringify(live));
    // and the reconstruction itself is stable
    const again = await rebuildView(sessionId, live.lastSeq);
    expect(JSON.stringify(again)).toBe(JSON.stringify(rebuilt));
  }, 30_000);

  it("agrees with the session document about the best variant", async () => {
    const doc = await api.getSession(sessionId);
    expect(doc.state).toBe("Finished");
    expect(doc.best?.variant_id).toBe(live.best?.variantId);
    expect(doc.best?.reductions).toEqual(live.best?.reductions);
  });

  it("dedupes a double-clicked send", async () => {
    const id = freshDedupeId();
    const first = await api.postMessage(sessionId, "/status", id);
    const second = await api.postMessage(sessionId, "/status", id);
    expect(second.accepted_seq).toBe(first.accepted_seq);
  });

  it("serves the diff inputs: variant and reference sources", async () => {
    const reference = await api.variantSource(sessionId, 0);
    const variant = await api.variantSource(sessionId, 1);
    expect(reference).toContain("module counter8");
    expect(variant).toContain("module counter8");
    expect(variant).not.toBe(reference);
  });

  it("serves the built UI as static files", async () => {
    const page = await fetch(`${base}/`);
    expect(page.status).toBe(200);
    expect(await page.text()).toContain('id="app"');
    const script = await fetch(`${base}/main.js`);
    expect(script.status).toBe(200);
    expect(await script.text()).toContain("boot");
  });
});
