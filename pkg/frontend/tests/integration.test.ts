// Scripted browser session against the real (mock-model-backed) service:
// the API client + reducer + renderers exercise the same code the page runs.

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";

import { ApiClient } from "../src/api.js";
import { renderApp } from "../src/render.js";
import { initialState, reduce, type UiEvent, type UiSessionState } from "../src/state.js";

const PORT = 8893;
const BASE = `http://127.0.0.1:${PORT}`;
const REPO_ROOT = resolve(__dirname, "..", "..");

let server: ChildProcess | null = null;

function cli(...args: string[]): void {
  execFileSync("python3", ["-m", "memrec.cli", ...args], {
    cwd: REPO_ROOT,
    stdio: "pipe",
  });
}

async function waitForService(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      const resp = await fetch(`${BASE}/api/users/probe/memory`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  const work = mkdtempSync(join(tmpdir(), "memrec-ui-"));
  cli("synth", "--out", join(work, "data"));
  cli("ingest", join(work, "data", "sessions.jsonl"), join(work, "data", "catalog.jsonl"),
      "--out", join(work, "corpus.json"));
  cli("split", join(work, "corpus.json"), "--n-valid", "2", "--n-test", "1");
  const cfg = join(work, "service.cfg");
  writeFileSync(cfg, [
    "llm.kind = mock",
    `service.bind = 127.0.0.1:${PORT}`,
    `service.store_root = ${join(work, "store")}`,
    `service.corpus = ${join(work, "corpus.json")}`,
    "service.cors_origins = http://localhost:5173",
    "",
  ].join("\n"));
  server = spawn("python3", ["-m", "memrec.cli", "serve", "--config", cfg], {
    cwd: REPO_ROOT,
    stdio: "ignore",
  });
  await waitForService();
});

afterAll(() => {
  server?.kill();
});

describe("scripted session against the live service", () => {
  const client = new ApiClient(BASE);
  let state: UiSessionState = initialState();
  const dispatch = (event: UiEvent) => {
    state = reduce(state, event);
  };

  it("runs the conversation and renders every panel", async () => {
    const userId = "ui-tester";
    const started = await client.startSession(userId);
    dispatch({ kind: "session-started", userId, sessionId: started.session_id });
    dispatch({ kind: "memory-snapshot", entries: await client.getMemory(userId) });
    expect(renderApp(state).memory).toContain("No stored memory");

    const texts = [
      "Hi! I am all about space operas. [[space opera::loves space opera]]",
      "And [[casey brook::adores casey brook]] should star in it.",
    ];
    for (const text of texts) {
      dispatch({ kind: "user-utterance", text });
      const response = await client.sendUtterance(started.session_id, text,
        state.pendingFeedback ?? undefined);
      dispatch({ kind: "system-response", response });
    }
    dispatch({ kind: "feedback-given", verdict: "up" });

    const view = renderApp(state);
    for (const text of texts) {
      expect(view.transcript).toContain("space opera");
    }
    expect(state.transcript.filter((t) => t.speaker === "system")).toHaveLength(2);

    // ranked list with provenance badges, at most 20 entries
    expect(state.recommendations.length).toBeLessThanOrEqual(20);
    expect(state.recommendations.length).toBeGreaterThan(0);
    expect(view.recommendations).toContain("badge provenance");

    // the answer's memory panel reflects the live payload
    expect(view.retrieved).toContain("guidelines v");
  });

  it("ending the session refreshes the inspector from the store", async () => {
    const ended = await client.endSession(state.sessionId!);
    dispatch({ kind: "session-ended", entitiesAdded: ended.entities_added });
    expect(ended.entities_added).toBeGreaterThan(0);

    const payload = await client.getMemory(state.userId!);
    dispatch({ kind: "memory-snapshot", entries: payload });

    const view = renderApp(state);
    expect(view.status).toContain(`${ended.entities_added} memory entries committed`);

    // inspector rows equal the GET payload, row for row
    const rowPattern = /<tr><td>(.*?)<\/td><td>(.*?)<\/td><td class="recency">(\d+)<\/td><\/tr>/g;
    const rows = [...view.memory.matchAll(rowPattern)].map((m) => ({
      entity: m[1],
      attitude: m[2],
      last_touched: Number(m[3]),
    }));
    const sortedPayload = [...payload].sort((a, b) => b.last_touched - a.last_touched);
    expect(rows).toEqual(sortedPayload);
    expect(rows.map((r) => r.entity)).toContain("space opera");
  });

  it("post-end mutation shows the session-ended notice", async () => {
    try {
      await client.sendUtterance(state.sessionId!, "one more?");
      expect.unreachable("service must reject utterances after end");
    } catch (err) {
      const status = (err as { status?: number }).status ?? 0;
      dispatch({ kind: "request-failed", message: String(err), status });
    }
    expect(state.endedNotice).toBe(true);
    expect(renderApp(state).status).toContain("session has ended");
  });
});
