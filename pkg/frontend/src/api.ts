// Thin REST client. The console holds no authority of its own: every
// mutation goes through these endpoints and is RBAC-checked server-side.

import type {
  ChainStatus,
  Incident,
  LedgerBlock,
  Rule,
  RunReport,
  RunSummary,
  Session,
  StreamMessage,
  TraceRecord,
  TwinConfig,
  Verdict,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public error: string,
    detail: string,
  ) {
    super(detail);
  }
}

export class ApiClient {
  private credential = "";

  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  setCredential(credential: string): void {
    this.credential = credential;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.credential) headers["Authorization"] = `Bearer ${this.credential}`;
    if (body !== undefined) headers["Content-Type"] = "application/json";
    const res = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await res.text();
    let parsed: unknown = null;
    try {
      parsed = text ? JSON.parse(text) : null;
    } catch {
      parsed = text;
    }
    if (!res.ok) {
      const obj = (parsed ?? {}) as { error?: string; detail?: string };
      throw new ApiError(res.status, obj.error ?? "HttpError", obj.detail ?? String(parsed));
    }
    return parsed as T;
  }

  login(token: string): Promise<Session> {
    return this.request<Session>("POST", "/api/session", { token });
  }

  meta(): Promise<{ entity_id: string; roles: string[]; active_config: TwinConfig }> {
    return this.request("GET", "/api/meta");
  }

  activeConfig(): Promise<TwinConfig> {
    return this.request("GET", "/api/config");
  }

  setpoint(name: "velocity" | "current" | "pressure" | "motor", value: number): Promise<unknown> {
    return this.request("POST", "/api/plant/setpoint", { name, value });
  }

  loadChassis(): Promise<{ object_id: number }> {
    return this.request("POST", "/api/plant/load");
  }

  plantStart(rate: number): Promise<unknown> {
    return this.request("POST", "/api/plant/start", { rate });
  }

  plantStop(): Promise<unknown> {
    return this.request("POST", "/api/plant/stop");
  }

  plantStep(ticks: number): Promise<{ tick: number; record: TraceRecord }> {
    return this.request("POST", "/api/plant/step", { ticks });
  }

  plantState(): Promise<{ running: boolean; record: TraceRecord }> {
    return this.request("GET", "/api/plant/state");
  }

  runs(): Promise<RunSummary[]> {
    return this.request("GET", "/api/runs");
  }

  run(runId: string): Promise<RunReport> {
    return this.request("GET", `/api/runs/${runId}`);
  }

  runConveyor(config: Partial<TwinConfig> | null, inputs: Record<string, unknown>): Promise<RunReport> {
    return this.request("POST", "/api/runs/conveyor", { config, inputs });
  }

  runArm(config: Partial<TwinConfig> | null, inputs: Record<string, unknown>): Promise<RunReport> {
    return this.request("POST", "/api/runs/arm", { config, inputs });
  }

  tune(runId: string, config: Partial<TwinConfig>): Promise<RunReport> {
    return this.request("POST", `/api/runs/${runId}/tune`, { config });
  }

  incidents(): Promise<Incident[]> {
    return this.request("GET", "/api/incidents");
  }

  rules(): Promise<Rule[]> {
    return this.request("GET", "/api/rules");
  }

  ruleHistory(ruleId: string): Promise<Rule[]> {
    return this.request("GET", `/api/rules/${ruleId}/history`);
  }

  upsertRule(description: string, association: string[], existing?: string): Promise<Rule> {
    return this.request("POST", "/api/rules", { description, association, existing });
  }

  ledgerBlocks(offset = 0, limit = 50): Promise<{ total: number; blocks: LedgerBlock[] }> {
    return this.request("GET", `/api/ledger/blocks?offset=${offset}&limit=${limit}`);
  }

  ledgerVerify(): Promise<ChainStatus> {
    return this.request("GET", "/api/ledger/verify");
  }

  verify(property: string, k: number, config?: Partial<TwinConfig>): Promise<Verdict> {
    return this.request("POST", "/api/verify", { property, k, config });
  }

  backlog(since = 0): Promise<{ messages: StreamMessage[] }> {
    return this.request("GET", `/api/stream/backlog?since=${since}`);
  }
}
