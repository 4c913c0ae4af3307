// End-to-end console flows against the real platform server.
//
// Spawns `twinsec serve` (the Python backend must be installed in the
// environment, e.g. `pip install -e ..`) and drives it exactly the way
// the console does: the same ApiClient, the same reducer.

import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { applyMessage, buildLineage, clampSetpoint, initialState } from "../src/model.js";
import type { StreamMessage, TraceRecord } from "../src/types.js";

const PORT = 8841;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;

async function waitForHealth(timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${BASE}/api/health`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("backend did not come up; is twinsec installed? (pip install -e ..)");
}

beforeAll(async () => {
  server = spawn("python3", ["-m", "twinsec.service.cli", "serve", "--port", String(PORT)], {
    stdio: "ignore",
  });
  await waitForHealth();
}, 30000);

afterAll(() => {
  server?.kill();
});

function operatorClient(): ApiClient {
  const api = new ApiClient(BASE);
  api.setCredential("operator-token");
  return api;
}

function analystClient(): ApiClient {
  const api = new ApiClient(BASE);
  api.setCredential("analyst-token");
  return api;
}

describe("console setpoint round-trip", () => {
  it("an in-bounds velocity change appears within one tick-message", async () => {
    const operator = operatorClient();
    const config = await operator.activeConfig();
    const target = config.tau_v[0] + (config.tau_v[1] - config.tau_v[0]) / 2;

    const before = await operator.backlog(0);
    const sinceSeq = before.messages.reduce((m, x) => Math.max(m, x.seq), 0);

    await operator.setpoint("velocity", target);
    await operator.plantStep(1);

    const after = await operator.backlog(sinceSeq);
    const firstTick = after.messages.find((m: StreamMessage) => m.channel === "telemetry");
    expect(firstTick).toBeDefined();
    const record = firstTick!.payload as unknown as TraceRecord;
    expect(record.velocity).toBeCloseTo(target, 9);

    // the telemetry panel reflects it after exactly that one message
    let panel = initialState();
    panel = applyMessage(panel, firstTick!);
    expect(panel.latest?.velocity).toBeCloseTo(target, 9);
    expect(panel.latest?.motor_on).toBe(true);
  });

  it("out-of-bounds entry is blocked client-side", async () => {
    const operator = operatorClient();
    const config = await operator.activeConfig();
    const result = clampSetpoint(String(config.tau_v[1] + 4), config.tau_v as [number, number]);
    // the form clamps (slider) or refuses to send (typed entry)
    expect(result.clamped).toBe(true);
  });

  it("a forced out-of-bounds request produces a server-side incident visible to the analyst", async () => {
    const operator = operatorClient();
    const analyst = analystClient();
    const config = await operator.activeConfig();
    const forced = config.tau_v[1] + 37;

    const err = await operator.setpoint("velocity", forced).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(422);

    const incidents = await analyst.incidents();
    const hit = incidents.find(
      (i) => (i.observed.context as { requested?: { velocity?: number } })?.requested?.velocity === forced,
    );
    expect(hit).toBeDefined();
    expect(hit!.severity).toBe("warning");

    // and it arrives on the analyst panel's stream, ordered
    const backlog = await analyst.backlog(0);
    let panel = initialState();
    for (const message of backlog.messages) panel = applyMessage(panel, message);
    expect(panel.incidents.length).toBeGreaterThan(0);
    const seqs = panel.incidents.map((i) => i.seq);
    expect([...seqs].sort((a, b) => a - b)).toEqual(seqs);
  });
});

describe("tune-and-rerun loop through the console", () => {
  it("breach run -> tune tau_t -> optimal rerun with lineage and rules", async () => {
    const analyst = analystClient();

    const breach = await analyst.runArm(
      { tau_t: [20.0, 40.0] as never },
      { current: 8.0, pressure: 80.0, weld_count: 1 },
    );
    expect(breach.outcome).toBe("incident");

    // the analyst widens the thermal bounds in the pre-filled editor
    const rerun = await analyst.tune(breach.run_id, { tau_t: [20.0, 80.0] as never });
    expect(rerun.outcome).toBe("optimal");
    expect(rerun.rules_written.length).toBeGreaterThan(0);
    expect(rerun.parent_run_id).toBe(breach.run_id);

    const runs = await analyst.runs();
    const roots = buildLineage(runs);
    const parent = roots.find((r) => r.run.run_id === breach.run_id);
    expect(parent).toBeDefined();
    expect(parent!.children.map((c) => c.run.run_id)).toContain(rerun.run_id);
  });

  it("the console holds no authority: the same guarded API refuses an operator", async () => {
    const operator = operatorClient();
    const err = await operator
      .runArm(null, { current: 5.0, pressure: 50.0, weld_count: 1 })
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(403);
  });
});
