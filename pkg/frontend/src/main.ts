// Console bootstrap: login, role-based panel visibility, stream wiring.

import { ApiClient, ApiError } from "./api.js";
import {
  applyMessage,
  buildLineage,
  clampSetpoint,
  initialState,
  makeReplayCursor,
  stepCursor,
  type ConsoleState,
  type ReplayCursor,
} from "./model.js";
import {
  renderIncidentDetail,
  renderIncidents,
  renderLedger,
  renderLineage,
  renderReplay,
  renderRules,
  renderTelemetry,
  renderVerdicts,
  toast,
} from "./panels.js";
import { StreamClient } from "./stream.js";
import type { Incident, Rule, TwinConfig, Verdict } from "./types.js";

const api = new ApiClient();
let state: ConsoleState = initialState();
let stream: StreamClient | null = null;
let config: TwinConfig | null = null;
let roles: string[] = [];
let replayCursor: ReplayCursor | null = null;
let verdicts: Verdict[] = [];

function $(id: string): HTMLElement {
  return document.getElementById(id)!;
}

function input(id: string): HTMLInputElement {
  return document.getElementById(id) as HTMLInputElement;
}

async function login(): Promise<void> {
  const token = input("login-token").value.trim();
  try {
    const session = await api.login(token);
    api.setCredential(session.session_id);
    roles = session.roles;
    $("login").classList.add("hidden");
    $("console").classList.remove("hidden");
    $("whoami").textContent = `${session.entity_id} (${roles.join(", ")})`;
    const operator = roles.includes("PlantOperator") || roles.includes("System");
    const analyst = roles.includes("SecurityAnalyst") || roles.includes("Auditor") || roles.includes("System");
    $("operator-panel").classList.toggle("hidden", !operator);
    $("analyst-panel").classList.toggle("hidden", !analyst);
    config = await api.activeConfig();
    bindSetpointBounds();
    stream = new StreamClient(token);
    stream.on((message) => {
      state = applyMessage(state, message);
      renderTelemetry(state);
      renderIncidents(state.incidents, selectIncident);
    });
    stream.connect();
    await refreshAnalyst();
  } catch (err) {
    toast(err instanceof ApiError ? `${err.error}: ${err.message}` : String(err), "error");
  }
}

function bindSetpointBounds(): void {
  if (!config) return;
  const bind = (name: "velocity" | "current" | "pressure", bounds: [number, number]) => {
    const slider = input(`sp-${name}`);
    const field = input(`sp-${name}-value`);
    slider.min = String(bounds[0]);
    slider.max = String(bounds[1]);
    slider.step = "0.1";
    $(`sp-${name}-bounds`).textContent = `[${bounds[0]}, ${bounds[1]}]`;
    slider.oninput = () => {
      field.value = slider.value;
      field.classList.remove("invalid");
    };
    // slider release issues the command
    slider.onchange = () => submitSetpoint(name, Number(slider.value));
    field.onchange = () => {
      const result = clampSetpoint(field.value, bounds);
      if (!result.valid) {
        field.classList.add("invalid");
        toast(`${name}: not a number`, "error");
        return;
      }
      if (result.clamped) {
        // typed out-of-bounds: blocked client-side, nothing sent
        field.classList.add("invalid");
        toast(`${name}: ${field.value} outside [${bounds[0]}, ${bounds[1]}], not sent`, "error");
        return;
      }
      field.classList.remove("invalid");
      void submitSetpoint(name, result.value);
    };
  };
  bind("velocity", config.tau_v as [number, number]);
  bind("current", config.tau_c as [number, number]);
  bind("pressure", config.tau_p as [number, number]);
}

async function submitSetpoint(name: "velocity" | "current" | "pressure", value: number): Promise<void> {
  try {
    await api.setpoint(name, value);
    toast(`${name} -> ${value}`);
  } catch (err) {
    // defense in depth: the server rejects forced out-of-bounds requests
    toast(err instanceof ApiError ? `${err.error}: ${err.message}` : String(err), "error");
  }
}

function selectIncident(incident: Incident): void {
  renderIncidentDetail(incident);
}

async function refreshAnalyst(): Promise<void> {
  try {
    const [runs, incidents, rules, ledger, status] = await Promise.all([
      api.runs(),
      api.incidents(),
      api.rules(),
      api.ledgerBlocks(0, 100),
      api.ledgerVerify(),
    ]);
    renderLineage(buildLineage(runs), (runId) => void tuneRun(runId));
    const live = state.incidents;
    const merged = incidents.map((incident, i) => ({ ...incident, seq: i + 1 }));
    renderIncidents(live.length >= merged.length ? live : merged, selectIncident);
    renderRules(rules, editRule);
    renderLedger(ledger.total, ledger.blocks, status);
  } catch (err) {
    toast(String(err), "error");
  }
}

async function tuneRun(runId: string): Promise<void> {
  if (!config) return;
  const raw = prompt("new tau_t max?", String(config.tau_t[1]));
  if (raw === null) return;
  const tauMax = Number(raw);
  if (!Number.isFinite(tauMax)) {
    toast("not a number", "error");
    return;
  }
  try {
    const report = await api.tune(runId, { tau_t: [config.tau_t[0], tauMax] });
    toast(`rerun ${report.run_id}: ${report.outcome}; rules [${report.rules_written.join(", ")}]`);
    await refreshAnalyst();
  } catch (err) {
    toast(String(err), "error");
  }
}

function editRule(rule: Rule): void {
  input("rule-text").value = rule.description;
  input("rule-assoc").value = rule.association.join(",");
  input("rule-existing").value = rule.rule_id;
}

async function saveRule(): Promise<void> {
  const description = input("rule-text").value.trim();
  const association = input("rule-assoc").value.split(",").map((s) => s.trim()).filter(Boolean);
  const existing = input("rule-existing").value.trim() || undefined;
  try {
    const rule = await api.upsertRule(description, association, existing);
    toast(`saved ${rule.rule_id} v${rule.version}`);
    await refreshAnalyst();
  } catch (err) {
    toast(err instanceof ApiError ? `${err.error}: ${err.message}` : String(err), "error");
  }
}

async function runVerification(): Promise<void> {
  verdicts = [];
  renderVerdicts(verdicts);
  for (const property of ["P1", "P2", "P3"]) {
    try {
      const verdict = await api.verify(property, 50);
      verdicts = [...verdicts, verdict];
      renderVerdicts(verdicts);
      if (verdict.result === "sat" && verdict.counterexample?.schedule) {
        toast(`${property} sat, counterexample at tick ${verdict.counterexample.tick}`);
      }
    } catch (err) {
      toast(String(err), "error");
    }
  }
  const sat = verdicts.find((v) => v.result === "sat" && v.counterexample);
  if (sat?.counterexample) {
    // step-through replay of the violating run, fed by the stored trace of
    // the latest run when available
    const runs = await api.runs();
    const last = runs[runs.length - 1];
    if (last) {
      const report = await api.run(last.run_id);
      replayCursor = makeReplayCursor(report.trace, sat.counterexample.tick);
      renderReplay(replayCursor);
    }
  }
}

function wire(): void {
  $("login-button").onclick = () => void login();
  input("login-token").onkeydown = (ev) => {
    if (ev.key === "Enter") void login();
  };
  $("btn-motor-on").onclick = () => void api.setpoint("motor", 1).then(() => toast("motor on"));
  $("btn-motor-off").onclick = () => void api.setpoint("motor", 0).then(() => toast("motor off"));
  $("btn-load").onclick = () =>
    void api.loadChassis().then((r) => toast(`chassis #${r.object_id} loaded`)).catch((e) => toast(String(e), "error"));
  $("btn-start").onclick = () => void api.plantStart(Number(input("plant-rate").value) || 1);
  $("btn-stop").onclick = () => void api.plantStop();
  $("btn-step").onclick = () => void api.plantStep(10);
  $("btn-refresh").onclick = () => void refreshAnalyst();
  $("btn-save-rule").onclick = () => void saveRule();
  $("btn-verify").onclick = () => void runVerification();
  $("btn-replay-prev").onclick = () => {
    if (replayCursor) {
      replayCursor = stepCursor(replayCursor, -1);
      renderReplay(replayCursor);
    }
  };
  $("btn-replay-next").onclick = () => {
    if (replayCursor) {
      replayCursor = stepCursor(replayCursor, +1);
      renderReplay(replayCursor);
    }
  };
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  wire();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", wire);
}
