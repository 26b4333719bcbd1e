// Browser entry: wires the API client and the pure reducer to the DOM.
// API base URL comes from ?api=... or localStorage, defaulting to the
// service's default bind address.

import { ApiClient, ApiError } from "./api.js";
import { initialState, reduce, type UiEvent, type UiSessionState } from "./state.js";
import { renderApp } from "./render.js";

function apiBase(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("api");
  if (fromQuery) {
    localStorage.setItem("memrec.api", fromQuery);
    return fromQuery;
  }
  return localStorage.getItem("memrec.api") ?? "http://127.0.0.1:8040";
}

const client = new ApiClient(apiBase());
let state: UiSessionState = initialState();

const el = (id: string) => document.getElementById(id) as HTMLElement;

function dispatch(event: UiEvent): void {
  state = reduce(state, event);
  const view = renderApp(state);
  el("transcript").innerHTML = view.transcript;
  el("recommendations").innerHTML = view.recommendations;
  el("retrieved").innerHTML = view.retrieved;
  el("memory").innerHTML = view.memory;
  el("status").innerHTML = view.status;
  el("transcript").scrollTop = el("transcript").scrollHeight;
  (el("send") as HTMLButtonElement).disabled = state.busy || state.ended || !state.sessionId;
  (el("end") as HTMLButtonElement).disabled = state.ended || !state.sessionId;
}

function fail(err: unknown): void {
  const status = err instanceof ApiError ? err.status : 0;
  dispatch({ kind: "request-failed", message: String((err as Error).message ?? err), status });
}

async function refreshMemory(): Promise<void> {
  if (!state.userId) return;
  try {
    dispatch({ kind: "memory-snapshot", entries: await client.getMemory(state.userId) });
  } catch (err) {
    fail(err);
  }
}

async function startSession(): Promise<void> {
  const userId = (el("user-id") as HTMLInputElement).value.trim();
  if (!userId) return;
  try {
    const res = await client.startSession(userId);
    dispatch({ kind: "session-started", userId, sessionId: res.session_id });
    await refreshMemory();
  } catch (err) {
    fail(err);
  }
}

let lastText = "";

async function send(textOverride?: string): Promise<void> {
  const input = el("message") as HTMLInputElement;
  const text = textOverride ?? input.value.trim();
  if (!text || !state.sessionId) return;
  lastText = text;
  input.value = "";
  const feedback = state.pendingFeedback ?? undefined;
  dispatch({ kind: "user-utterance", text });
  try {
    const response = await client.sendUtterance(state.sessionId, text, feedback);
    dispatch({ kind: "system-response", response });
  } catch (err) {
    fail(err);
  }
}

async function endSession(): Promise<void> {
  if (!state.sessionId) return;
  try {
    const res = await client.endSession(state.sessionId);
    dispatch({ kind: "session-ended", entitiesAdded: res.entities_added });
    await refreshMemory(); // the panel reflects the freshly committed bank
  } catch (err) {
    fail(err);
  }
}

el("start").addEventListener("click", () => void startSession());
el("send").addEventListener("click", () => void send());
el("message").addEventListener("keydown", (ev) => {
  if ((ev as KeyboardEvent).key === "Enter") void send();
});
el("end").addEventListener("click", () => void endSession());
el("thumbs-up").addEventListener("click", () => dispatch({ kind: "feedback-given", verdict: "up" }));
el("thumbs-down").addEventListener("click", () => dispatch({ kind: "feedback-given", verdict: "down" }));
document.addEventListener("click", (ev) => {
  const target = ev.target as HTMLElement;
  if (target.dataset.action === "toggle-sort") dispatch({ kind: "memory-sort-toggled" });
  if (target.dataset.action === "retry") void send(lastText);
});

dispatch({ kind: "memory-snapshot", entries: [] }); // first paint
