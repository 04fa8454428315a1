// Thin fetch wrapper over the gateway's JSON endpoints.

import type { FeedbackInput, SessionEnvelope, UserProfileInput } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class GatewayError extends Error {
  constructor(public status: number, public detail: string) {
    super(`gateway ${status}: ${detail}`);
  }
}

async function readJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { error?: string };
      if (body.error) detail = body.error;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new GatewayError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class GatewayClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => readJson<T>(r));
  }

  createSession(profile: UserProfileInput): Promise<SessionEnvelope> {
    return this.post("/session", profile);
  }

  sendMessage(sessionId: string, text: string): Promise<SessionEnvelope> {
    return this.post(`/session/${sessionId}/message`, { text });
  }

  getSession(sessionId: string): Promise<SessionEnvelope> {
    return this.fetchFn(this.baseUrl + `/session/${sessionId}`).then((r) =>
      readJson<SessionEnvelope>(r),
    );
  }

  submitFeedback(sessionId: string, record: FeedbackInput): Promise<{ ok: boolean }> {
    return this.post(`/session/${sessionId}/feedback`, record);
  }
}
