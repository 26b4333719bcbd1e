// HTML renderers: badges, tables, banners, escaping.

import { describe, expect, it } from "vitest";

import {
  escapeHtml,
  renderMemoryTable,
  renderRecommendations,
  renderStatus,
  renderTranscript,
} from "../src/render.js";
import { initialState, reduce, type UiSessionState } from "../src/state.js";

function withState(partial: Partial<UiSessionState>): UiSessionState {
  return { ...initialState(), ...partial };
}

describe("escapeHtml", () => {
  it("neutralizes angle brackets, ampersands, quotes", () => {
    expect(escapeHtml('<a href="x">&</a>')).toBe("&lt;a href=&quot;x&quot;&gt;&amp;&lt;/a&gt;");
  });
});

describe("renderTranscript", () => {
  it("renders turns in order with speaker classes", () => {
    const html = renderTranscript(
      withState({
        transcript: [
          { speaker: "user", text: "hello" },
          { speaker: "system", text: "hi there" },
        ],
      }),
    );
    expect(html.indexOf("hello")).toBeLessThan(html.indexOf("hi there"));
    expect(html).toContain('class="turn user"');
    expect(html).toContain('class="turn system"');
  });

  it("shows a fallback badge on degraded answers", () => {
    const html = renderTranscript(
      withState({ transcript: [{ speaker: "system", text: "x", fallback: true }] }),
    );
    expect(html).toContain('badge fallback');
  });

  it("escapes markup in utterances", () => {
    const html = renderTranscript(
      withState({ transcript: [{ speaker: "user", text: "<script>alert(1)</script>" }] }),
    );
    expect(html).not.toContain("<script>");
    expect(html).toContain("&lt;script&gt;");
  });
});

describe("renderRecommendations", () => {
  it("renders one row per item with a provenance badge", () => {
    const html = renderRecommendations(
      withState({
        recommendations: [
          { item_id: "a", title: "Film A", provenance: "expert" },
          { item_id: "b", title: "Film B", provenance: "supplement" },
          { item_id: "c", title: "Film C", provenance: "pad" },
        ],
      }),
    );
    expect((html.match(/<li>/g) ?? []).length).toBe(3);
    expect(html).toContain("provenance expert");
    expect(html).toContain("provenance supplement");
    expect(html).toContain("provenance pad");
  });
});

describe("renderMemoryTable", () => {
  const state = withState({
    memory: [
      { entity: "noir", attitude: "likes noir", last_touched: 2 },
      { entity: "westerns", attitude: "avoids westerns", last_touched: 9 },
    ],
  });

  it("one row per entry, most recent first", () => {
    const html = renderMemoryTable(state);
    expect((html.match(/<tr><td>/g) ?? []).length).toBe(2);
    expect(html.indexOf("westerns")).toBeLessThan(html.indexOf("noir"));
  });

  it("sort toggle reverses row order", () => {
    const toggled = reduce(state, { kind: "memory-sort-toggled" });
    const html = renderMemoryTable(toggled);
    expect(html.indexOf("noir")).toBeLessThan(html.indexOf("westerns"));
  });

  it("empty state for unknown users", () => {
    expect(renderMemoryTable(withState({}))).toContain("No stored memory");
  });
});

describe("renderStatus", () => {
  it("error banner carries a retry control", () => {
    const html = renderStatus(withState({ errorBanner: "network failure" }));
    expect(html).toContain("retry");
  });

  it("session-ended notice after 409", () => {
    const html = renderStatus(withState({ endedNotice: true, ended: true }));
    expect(html).toContain("session has ended");
  });

  it("commit banner surfaces entities_added", () => {
    const html = renderStatus(withState({ ended: true, entitiesAdded: 4 }));
    expect(html).toContain("4 memory entries committed");
  });
});
