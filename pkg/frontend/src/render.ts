// Pure HTML renderers: state in, markup string out. The DOM glue in main.ts
// just assigns innerHTML, so everything visible is testable without a browser.

import type { UiSessionState } from "./state.js";
import { sortedMemory } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const PROVENANCE_LABEL: Record<string, string> = {
  expert: "expert pick",
  supplement: "model suggestion",
  pad: "fallback",
};

export function renderTranscript(state: UiSessionState): string {
  const turns = state.transcript.map((turn) => {
    const classes = ["turn", turn.speaker];
    const badges: string[] = [];
    if (turn.fallback) badges.push('<span class="badge fallback">fallback</span>');
    if (turn.feedback) {
      badges.push(`<span class="badge feedback">${turn.feedback === "up" ? "👍" : "👎"}</span>`);
    }
    return `<div class="${classes.join(" ")}">${escapeHtml(turn.text)}${badges.join("")}</div>`;
  });
  if (state.busy) turns.push('<div class="turn system pending">…</div>');
  return turns.join("\n");
}

export function renderRecommendations(state: UiSessionState): string {
  if (state.recommendations.length === 0) {
    return '<p class="empty">No recommendations yet.</p>';
  }
  const rows = state.recommendations.map((rec, i) => {
    const label = PROVENANCE_LABEL[rec.provenance] ?? rec.provenance;
    return (
      `<li><span class="rank">${i + 1}.</span> ${escapeHtml(rec.title)} ` +
      `<span class="badge provenance ${rec.provenance}">${label}</span></li>`
    );
  });
  return `<ol class="recommendations">${rows.join("")}</ol>`;
}

export function renderRetrieved(state: UiSessionState): string {
  const version =
    state.guidelinesVersion === null
      ? ""
      : `<p class="guidelines">guidelines v${state.guidelinesVersion}</p>`;
  if (state.retrieved.length === 0) {
    return `${version}<p class="empty">No memory used for this answer.</p>`;
  }
  const rows = state.retrieved.map(
    (r) =>
      `<li><strong>${escapeHtml(r.entity)}</strong>: ${escapeHtml(r.attitude)}</li>`,
  );
  return `${version}<ul class="retrieved">${rows.join("")}</ul>`;
}

export function renderMemoryTable(state: UiSessionState): string {
  if (state.memory.length === 0) {
    return '<p class="empty">No stored memory for this user yet.</p>';
  }
  const rows = sortedMemory(state).map(
    (e) =>
      `<tr><td>${escapeHtml(e.entity)}</td><td>${escapeHtml(e.attitude)}</td>` +
      `<td class="recency">${e.last_touched}</td></tr>`,
  );
  const arrow = state.memorySort === "recent-first" ? "▾" : "▴";
  return (
    '<table class="memory"><thead><tr><th>entity</th><th>attitude</th>' +
    `<th class="sortable" data-action="toggle-sort">recency ${arrow}</th></tr></thead>` +
    `<tbody>${rows.join("")}</tbody></table>`
  );
}

export function renderStatus(state: UiSessionState): string {
  const bits: string[] = [];
  if (state.errorBanner) {
    bits.push(
      `<div class="banner error">${escapeHtml(state.errorBanner)} ` +
      '<button data-action="retry">retry</button></div>',
    );
  }
  if (state.endedNotice) {
    bits.push('<div class="banner ended">This session has ended. Start a new one.</div>');
  }
  if (state.ended && state.entitiesAdded !== null) {
    bits.push(
      `<div class="banner committed">Session ended; ${state.entitiesAdded} ` +
      "memory entries committed.</div>",
    );
  }
  return bits.join("");
}

export function renderApp(state: UiSessionState): {
  transcript: string;
  recommendations: string;
  retrieved: string;
  memory: string;
  status: string;
} {
  return {
    transcript: renderTranscript(state),
    recommendations: renderRecommendations(state),
    retrieved: renderRetrieved(state),
    memory: renderMemoryTable(state),
    status: renderStatus(state),
  };
}
