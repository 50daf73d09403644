// Typed client for the dialogue gateway HTTP API. All network access in
// the console goes through this module; fetch is injectable for tests.

export interface SessionInfo {
  session_id: string;
  seed: number;
}

export interface CorrectionVerdict {
  kind: "correct" | "wrong";
  violated_rule: number | null;
  explanation: string | null;
  corrected_output: string | null;
}

export interface CorrectionTrace {
  first_response: string;
  fallback: boolean;
  verdict: CorrectionVerdict | null;
}

export interface AssistantPayload {
  modality: "text" | "image";
  text: string;
  image_url?: string;
  drawing_prompt?: string;
  correction_trace?: CorrectionTrace;
}

export interface HistoryEntry {
  user: { text: string; image_ref: string | null };
  assistant: { modality: "text" | "image"; text: string; image_ref: string | null };
}

export interface HistoryPayload {
  session_id: string;
  seed: number;
  entries: HistoryEntry[];
}

export class GatewayError extends Error {
  constructor(
    public readonly status: number,
    public readonly kind: string,
    detail: string
  ) {
    super(`${kind}: ${detail}`);
  }
}

// A turn is already in flight on this session (HTTP 409).
export class GatewayBusyError extends GatewayError {}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init)
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return this.unwrap<T>(response);
  }

  private async unwrap<T>(response: Response): Promise<T> {
    const payload = await response.json();
    if (response.ok) {
      return payload as T;
    }
    const kind = typeof payload?.error === "string" ? payload.error : "unknown";
    const detail = typeof payload?.detail === "string" ? payload.detail : "";
    if (response.status === 409) {
      throw new GatewayBusyError(409, kind, detail);
    }
    throw new GatewayError(response.status, kind, detail);
  }

  createSession(seed?: number): Promise<SessionInfo> {
    return this.post("/v1/sessions", seed === undefined ? {} : { seed });
  }

  sendMessage(
    sessionId: string,
    text: string,
    imageB64?: string
  ): Promise<AssistantPayload> {
    const body: Record<string, unknown> = { text };
    if (imageB64 !== undefined) {
      body.image_b64 = imageB64;
    }
    return this.post(`/v1/sessions/${sessionId}/messages`, body);
  }

  async fetchHistory(sessionId: string): Promise<HistoryPayload> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/v1/sessions/${sessionId}/history`
    );
    return this.unwrap<HistoryPayload>(response);
  }

  imageUrl(path: string): string {
    return this.baseUrl + path;
  }
}
