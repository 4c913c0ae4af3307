// Pure console view-model.
//
// Rendering is a fold over the ordered stream: applyMessage never
// mutates its input, ignores duplicate sequence numbers (the stream is
// at-least-once), and replaying a recorded stream reproduces the exact
// same state. All panel logic that matters lives here so it can be
// tested headlessly; the DOM layer just paints this state.

import type { Incident, RunSummary, StreamMessage, TraceRecord } from "./types.js";

export interface TempPoint {
  time: number;
  temp: number;
}

export interface IncidentEntry extends Incident {
  seq: number;
}

export interface EventEntry {
  seq: number;
  kind: string;
  payload: Record<string, unknown>;
}

export interface ConsoleState {
  lastSeq: number;
  latest: TraceRecord | null;
  tempSeries: TempPoint[];
  incidents: IncidentEntry[];
  events: EventEntry[];
  chainBanner: string | null;
  runCompletions: Array<{ run_id: string; outcome: string; parent_run_id: string | null }>;
}

export const SERIES_LIMIT = 720;
export const MAX_UPDATES_PER_SECOND = 30;

export function initialState(): ConsoleState {
  return {
    lastSeq: 0,
    latest: null,
    tempSeries: [],
    incidents: [],
    events: [],
    chainBanner: null,
    runCompletions: [],
  };
}

export function applyMessage(state: ConsoleState, message: StreamMessage): ConsoleState {
  // the stream is at-least-once: drop replays, but never lose a late
  // incident just because newer messages already arrived (resume can
  // interleave backlog with live delivery)
  if (message.channel === "incident") {
    if (state.incidents.some((i) => i.seq === message.seq)) {
      return state;
    }
  } else if (message.seq >= 0 && message.seq <= state.lastSeq) {
    return state;
  }
  const next: ConsoleState = { ...state, lastSeq: Math.max(state.lastSeq, message.seq) };

  if (message.channel === "telemetry") {
    const record = message.payload as unknown as TraceRecord;
    next.latest = record;
    const point = { time: record.time, temp: record.arm.object_temp };
    const series = maybeAppendDecimated(state.tempSeries, point);
    next.tempSeries = series.length > SERIES_LIMIT ? series.slice(-SERIES_LIMIT) : series;
  } else if (message.channel === "incident") {
    const incident = { ...(message.payload as unknown as Incident), seq: message.seq };
    next.incidents = insertBySeq(state.incidents, incident);
  } else if (message.channel === "event") {
    const payload = message.payload as Record<string, unknown>;
    const entry: EventEntry = { seq: message.seq, kind: String(payload.kind ?? ""), payload };
    next.events = [...state.events.slice(-199), entry];
    if (entry.kind === "run_completed") {
      next.runCompletions = [
        ...state.runCompletions,
        {
          run_id: String(payload.run_id),
          outcome: String(payload.outcome),
          parent_run_id: (payload.parent_run_id as string | null) ?? null,
        },
      ];
    }
  }
  return next;
}

export function replayStream(messages: StreamMessage[], from?: ConsoleState): ConsoleState {
  let state = from ?? initialState();
  for (const message of messages) {
    state = applyMessage(state, message);
  }
  return state;
}

// keep at most MAX_UPDATES_PER_SECOND points per second of plant time
function maybeAppendDecimated(series: TempPoint[], point: TempPoint): TempPoint[] {
  const last = series[series.length - 1];
  if (last && point.time - last.time < 1 / MAX_UPDATES_PER_SECOND - 1e-9) {
    return series;
  }
  return [...series, point];
}

function insertBySeq(list: IncidentEntry[], entry: IncidentEntry): IncidentEntry[] {
  const out = [...list, entry];
  out.sort((a, b) => a.seq - b.seq);
  return out;
}

// --- setpoint clamping ------------------------------------------------

export interface ClampResult {
  value: number;
  clamped: boolean;
  valid: boolean;
}

// client-side guard: sliders clamp to the active config's bounds; typed
// garbage is marked invalid and never sent (the server still re-checks)
export function clampSetpoint(raw: number | string, bounds: [number, number]): ClampResult {
  const value = typeof raw === "string" ? Number(raw) : raw;
  if (!Number.isFinite(value)) {
    return { value: NaN, clamped: false, valid: false };
  }
  const [lo, hi] = bounds;
  if (value < lo) return { value: lo, clamped: true, valid: true };
  if (value > hi) return { value: hi, clamped: true, valid: true };
  return { value, clamped: false, valid: true };
}

export function inBounds(value: number, bounds: [number, number]): boolean {
  return Number.isFinite(value) && value >= bounds[0] && value <= bounds[1];
}

// --- run lineage -------------------------------------------------------

export interface LineageNode {
  run: RunSummary;
  children: LineageNode[];
}

export function buildLineage(runs: RunSummary[]): LineageNode[] {
  const nodes = new Map<string, LineageNode>();
  for (const run of runs) {
    nodes.set(run.run_id, { run, children: [] });
  }
  const roots: LineageNode[] = [];
  for (const run of runs) {
    const node = nodes.get(run.run_id)!;
    const parent = run.parent_run_id ? nodes.get(run.parent_run_id) : undefined;
    if (parent) {
      parent.children.push(node);
    } else {
      roots.push(node);
    }
  }
  return roots;
}

export function lineageDepth(node: LineageNode): number {
  return 1 + Math.max(0, ...node.children.map(lineageDepth));
}

// --- counterexample replay ----------------------------------------------

export interface ReplayCursor {
  records: TraceRecord[];
  index: number;
  violatingTick: number | null;
}

export function makeReplayCursor(records: TraceRecord[], violatingTick: number | null): ReplayCursor {
  return { records, index: 0, violatingTick };
}

export function stepCursor(cursor: ReplayCursor, delta: number): ReplayCursor {
  const index = Math.min(Math.max(cursor.index + delta, 0), Math.max(cursor.records.length - 1, 0));
  return { ...cursor, index };
}

export function cursorAtViolation(cursor: ReplayCursor): boolean {
  const record = cursor.records[cursor.index];
  return record !== undefined && cursor.violatingTick !== null && record.tick === cursor.violatingTick;
}
