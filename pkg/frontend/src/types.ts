// Wire types for the finask HTTP API (see docs/http-api.md and
// docs/trace-schema.md in the repository root).

export type Cell = string | number | boolean | null;

export interface AskOptions {
  multistep?: boolean;
  trace?: boolean;
}

export interface AskResponse {
  status: "answered" | "exhausted" | "failed" | "accepted";
  columns: string[] | null;
  rows: Cell[][] | null;
  trace_id: string | null;
  elapsed_ms?: number;
  detail?: string;
}

export interface GuardViolation {
  rule: string;
  location: string;
  message: string;
}

export interface GuardReport {
  verdict: "pass" | "rewritten" | "reject";
  violations: GuardViolation[];
  rewritten_sql: string | null;
  notes: string[];
}

export interface ExecutionTable {
  kind: "table";
  columns: string[];
  rows: Cell[][];
}

export interface ExecutionError {
  kind: "error";
  error_kind: string;
  message: string;
}

export interface CorrectionDecision {
  verdict: "yes" | "no";
  reasoning: string;
  new_sql: string | null;
  warning: string | null;
}

export interface SqlAttempt {
  iteration: number;
  sql: string;
  guard: GuardReport;
  executed_sql: string | null;
  execution: ExecutionTable | ExecutionError | null;
  correction_decision: CorrectionDecision | null;
}

export interface LinkedCandidate {
  term: string;
  resolved_code: string;
  score: number;
  surface_text: string;
}

export interface ProbeRecord {
  sql: string;
  guard_verdict: string;
  outcome: string;
}

export interface ModelReply {
  text: string;
  provider_id: string;
  latency: number;
  token_usage: { prompt: number; completion: number };
}

export interface TraceDoc {
  trace_id: string;
  question: string;
  entities: Record<string, string[]> | null;
  entity_warnings: string[];
  linked_candidates: Record<string, LinkedCandidate[]> | null;
  fewshots: { question: string; sql: string; commentary: string | null }[];
  exploration_notes?: string;
  probes: ProbeRecord[];
  attempts: SqlAttempt[];
  model_replies: ModelReply[];
  timings: Record<string, number>;
  created_at: number;
}

export interface HealthResponse {
  ready: boolean;
  components: Record<string, boolean>;
}

export interface SchemaResponse {
  tables: { name: string; columns: { name: string; kind: string }[] }[];
  category_codes: Record<string, string>;
  ratio_codes: Record<string, string>;
}
