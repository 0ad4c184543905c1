import type {
  AskOptions,
  AskResponse,
  HealthResponse,
  SchemaResponse,
  TraceDoc,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export class TraceExpiredError extends ApiError {
  constructor() {
    super(404, "trace expired");
  }
}

/** Thin client over the documented HTTP API; no business logic lives here. */
export class ApiClient {
  constructor(readonly baseUrl: string = "", readonly apiKey: string = "") {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.apiKey) headers["x-api-key"] = this.apiKey;
    return headers;
  }

  async ask(question: string, options: AskOptions = {}): Promise<AskResponse> {
    const response = await fetch(`${this.baseUrl}/api/ask`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify({ question, options }),
    });
    const body = await response.json().catch(() => null);
    if (!response.ok && response.status !== 502) {
      throw new ApiError(response.status, body?.error ?? `HTTP ${response.status}`);
    }
    return body as AskResponse;
  }

  async trace(traceId: string): Promise<TraceDoc> {
    const response = await fetch(`${this.baseUrl}/api/trace/${traceId}`, {
      headers: this.headers(),
    });
    if (response.status === 404) throw new TraceExpiredError();
    if (!response.ok) throw new ApiError(response.status, `HTTP ${response.status}`);
    return (await response.json()) as TraceDoc;
  }

  async healthz(): Promise<HealthResponse> {
    const response = await fetch(`${this.baseUrl}/api/healthz`);
    return (await response.json()) as HealthResponse;
  }

  async schema(): Promise<SchemaResponse> {
    const response = await fetch(`${this.baseUrl}/api/schema`);
    if (!response.ok) throw new ApiError(response.status, `HTTP ${response.status}`);
    return (await response.json()) as SchemaResponse;
  }
}
