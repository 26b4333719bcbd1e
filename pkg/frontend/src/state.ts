// UI session state as a pure fold over server responses.
//
// Every change to the view goes through reduce(); replaying the same event
// sequence reproduces the exact same state, which is what the replay test
// asserts. Nothing here mutates its inputs.

import type { MemoryEntry, Recommendation, RetrievedEntry, UtteranceResponse } from "./api.js";

export type Verdict = "up" | "down";

export interface TranscriptTurn {
  speaker: "user" | "system";
  text: string;
  fallback?: boolean;
  feedback?: Verdict;
}

export type MemorySort = "recent-first" | "oldest-first";

export interface UiSessionState {
  userId: string | null;
  sessionId: string | null;
  transcript: TranscriptTurn[];
  recommendations: Recommendation[];
  retrieved: RetrievedEntry[];
  guidelinesVersion: number | null;
  memory: MemoryEntry[];
  memorySort: MemorySort;
  entitiesAdded: number | null;
  ended: boolean;
  busy: boolean;
  errorBanner: string | null; // inline retry banner, null when healthy
  endedNotice: boolean; // server said 409: session already over
  pendingFeedback: Verdict | null; // attached to the next utterance
}

export type UiEvent =
  | { kind: "session-started"; userId: string; sessionId: string }
  | { kind: "user-utterance"; text: string } // optimistic echo before the reply
  | { kind: "system-response"; response: UtteranceResponse }
  | { kind: "feedback-given"; verdict: Verdict }
  | { kind: "session-ended"; entitiesAdded: number }
  | { kind: "memory-snapshot"; entries: MemoryEntry[] }
  | { kind: "memory-sort-toggled" }
  | { kind: "request-failed"; message: string; status: number };

export function initialState(): UiSessionState {
  return {
    userId: null,
    sessionId: null,
    transcript: [],
    recommendations: [],
    retrieved: [],
    guidelinesVersion: null,
    memory: [],
    memorySort: "recent-first",
    entitiesAdded: null,
    ended: false,
    busy: false,
    errorBanner: null,
    endedNotice: false,
    pendingFeedback: null,
  };
}

export function reduce(state: UiSessionState, event: UiEvent): UiSessionState {
  switch (event.kind) {
    case "session-started":
      return {
        ...initialState(),
        userId: event.userId,
        sessionId: event.sessionId,
        memory: state.memory,
        memorySort: state.memorySort,
      };
    case "user-utterance":
      return {
        ...state,
        busy: true,
        errorBanner: null,
        transcript: [...state.transcript, { speaker: "user", text: event.text }],
      };
    case "system-response": {
      const r = event.response;
      return {
        ...state,
        busy: false,
        errorBanner: null,
        pendingFeedback: null,
        transcript: [
          ...state.transcript,
          { speaker: "system", text: r.reply, fallback: r.fallback },
        ],
        recommendations: r.recommendations,
        retrieved: r.retrieved,
        guidelinesVersion: r.guidelines_version,
      };
    }
    case "feedback-given": {
      // badge the most recent system turn; the verdict rides along with the
      // next utterance since feedback is a field of that request
      const transcript = state.transcript.slice();
      for (let i = transcript.length - 1; i >= 0; i--) {
        if (transcript[i].speaker === "system") {
          transcript[i] = { ...transcript[i], feedback: event.verdict };
          break;
        }
      }
      return { ...state, transcript, pendingFeedback: event.verdict };
    }
    case "session-ended":
      return {
        ...state,
        busy: false,
        ended: true,
        entitiesAdded: event.entitiesAdded,
      };
    case "memory-snapshot":
      return { ...state, memory: event.entries };
    case "memory-sort-toggled":
      return {
        ...state,
        memorySort: state.memorySort === "recent-first" ? "oldest-first" : "recent-first",
      };
    case "request-failed":
      if (event.status === 409) {
        return { ...state, busy: false, ended: true, endedNotice: true, errorBanner: null };
      }
      return { ...state, busy: false, errorBanner: event.message };
  }
}

export function replay(events: UiEvent[]): UiSessionState {
  return events.reduce(reduce, initialState());
}

export function sortedMemory(state: UiSessionState): MemoryEntry[] {
  const rows = state.memory.slice();
  rows.sort((a, b) =>
    state.memorySort === "recent-first"
      ? b.last_touched - a.last_touched
      : a.last_touched - b.last_touched,
  );
  return rows;
}
