// Wire types mirrored from the service API's documented JSON schemas.

export interface BoundsPair extends Array<number> {
  0: number;
  1: number;
}

export interface TwinConfig {
  tau_v: BoundsPair;
  tau_o: BoundsPair;
  tau_c: BoundsPair;
  tau_p: BoundsPair;
  tau_t: BoundsPair;
  d: number;
  k_heat: number;
  k_cool: number;
  a_max_capacity: number;
  dt: number;
  max_ticks: number;
}

export interface ObjectOnBelt {
  id: number;
  position: number;
  welded: boolean;
}

export interface ArmFields {
  current: number;
  pressure: number;
  object_temp: number;
  task_status: number;
  weld_started_at: number | null;
  objects_welded: number;
}

export interface TraceRecord {
  tick: number;
  time: number;
  motor_on: boolean;
  velocity: number;
  assets_on: Record<string, boolean>;
  objects: ObjectOnBelt[];
  arm: ArmFields;
  sensors: Record<string, number>;
}

export interface Incident {
  incident_id: string;
  tick: number;
  violated_rule: string;
  actor_ids: string[];
  observed: {
    values?: Record<string, number>;
    statuses?: Record<string, string>;
    counters?: Record<string, number>;
    context?: Record<string, unknown>;
  };
  severity: "info" | "warning" | "critical";
  action_taken: string;
  run_id?: string | null;
  source?: string;
}

export interface RunSummary {
  run_id: string;
  mode: string;
  outcome: string;
  incidents: number;
  o_count: number;
  parent_run_id: string | null;
  rules_written: string[];
}

export interface RunReport extends RunSummary {
  config: TwinConfig;
  trace: TraceRecord[];
  events: Array<Record<string, unknown>>;
  task_status: number;
}

export interface Rule {
  rule_id: string;
  version: number;
  description: string;
  association: string[];
  author: string;
  created_at: number;
  updated_at: number;
}

export interface ChainStatus {
  intact: boolean;
  broken_index: number | null;
  reason: string | null;
}

export interface LedgerBlock {
  index: number;
  timestamp: number;
  author: string;
  hash: string;
  prev_hash: string;
  entries: Array<{ kind: string; payload: unknown; payload_digest: string }>;
}

export interface Verdict {
  property: { id: string; d?: number; tau?: BoundsPair };
  result: "sat" | "unsat";
  bound_k: number;
  explored_states: number;
  counterexample: {
    tick: number;
    details: Record<string, unknown>;
    schedule?: Record<string, unknown>;
  } | null;
  wall_seconds?: number;
}

export interface StreamMessage {
  seq: number;
  channel: "telemetry" | "incident" | "event" | "pong";
  payload: Record<string, unknown>;
}

export interface Session {
  session_id: string;
  entity_id: string;
  roles: string[];
  issued_at: number;
  expiry: number;
}
