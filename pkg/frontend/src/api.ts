// Typed client for the recommendation service JSON API.

export interface Recommendation {
  item_id: string;
  title: string;
  provenance: "expert" | "supplement" | "pad";
}

export interface RetrievedEntry {
  entity: string;
  attitude: string;
}

export interface UtteranceResponse {
  reply: string;
  recommendations: Recommendation[];
  retrieved: RetrievedEntry[];
  guidelines_version: number;
  fallback: boolean;
}

export interface MemoryEntry {
  entity: string;
  attitude: string;
  last_touched: number;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, init);
  } catch (err) {
    throw new ApiError(`network failure: ${String(err)}`, 0);
  }
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const detail = (body as { error?: string }).error ?? resp.statusText;
    throw new ApiError(detail, resp.status);
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  startSession(userId: string): Promise<{ session_id: string; user_id: string }> {
    return request(this.url("/api/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ user_id: userId }),
    });
  }

  sendUtterance(
    sessionId: string,
    text: string,
    feedback?: "up" | "down",
  ): Promise<UtteranceResponse> {
    const payload: { text: string; feedback?: string } = { text };
    if (feedback) payload.feedback = feedback;
    return request(this.url(`/api/sessions/${sessionId}/utterances`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  endSession(sessionId: string): Promise<{ entities_added: number }> {
    return request(this.url(`/api/sessions/${sessionId}/end`), { method: "POST" });
  }

  async getMemory(userId: string): Promise<MemoryEntry[]> {
    const body = await request<{ entries: MemoryEntry[] }>(
      this.url(`/api/users/${encodeURIComponent(userId)}/memory`),
    );
    return body.entries;
  }
}
