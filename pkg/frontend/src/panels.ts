// DOM painters. Everything here is a pure function of ConsoleState plus
// fetched page data; no business logic beyond formatting.

import type { ConsoleState, LineageNode, ReplayCursor } from "./model.js";
import { cursorAtViolation } from "./model.js";
import type { ChainStatus, Incident, LedgerBlock, Rule, TraceRecord, Verdict } from "./types.js";

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

export function renderTelemetry(state: ConsoleState): void {
  const record = state.latest;
  el("gauge-velocity").textContent = record ? record.velocity.toFixed(2) : "–";
  el("gauge-motor").textContent = record ? (record.motor_on ? "ON" : "OFF") : "–";
  el("gauge-temp").textContent = record ? record.arm.object_temp.toFixed(1) : "–";
  el("gauge-welded").textContent = record ? String(record.arm.objects_welded) : "–";
  el("gauge-tick").textContent = record ? String(record.tick) : "–";

  const strip = el("belt-strip");
  strip.innerHTML = "";
  if (record) {
    for (const obj of record.objects) {
      const chip = document.createElement("div");
      chip.className = `chassis ${obj.welded ? "welded" : ""}`;
      chip.style.left = `${Math.min(obj.position / 20, 1) * 100}%`;
      chip.title = `#${obj.id} @ ${obj.position.toFixed(2)}`;
      strip.appendChild(chip);
    }
  }
  drawSeries(el("temp-curve") as unknown as SVGSVGElement, state.tempSeries.map((p) => [p.time, p.temp]));
}

function drawSeries(svg: SVGSVGElement, points: Array<[number, number]>): void {
  const W = 560;
  const H = 120;
  svg.setAttribute("viewBox", `0 0 ${W} ${H}`);
  svg.innerHTML = "";
  if (points.length < 2) return;
  const xs = points.map((p) => p[0]);
  const ys = points.map((p) => p[1]);
  const x0 = Math.min(...xs);
  const x1 = Math.max(...xs);
  const y0 = Math.min(...ys, 20);
  const y1 = Math.max(...ys, 30);
  const path = points
    .map(([x, y], i) => {
      const px = ((x - x0) / Math.max(x1 - x0, 1e-9)) * W;
      const py = H - ((y - y0) / Math.max(y1 - y0, 1e-9)) * H;
      return `${i === 0 ? "M" : "L"}${px.toFixed(1)},${py.toFixed(1)}`;
    })
    .join(" ");
  const node = document.createElementNS("http://www.w3.org/2000/svg", "path");
  node.setAttribute("d", path);
  node.setAttribute("class", "curve");
  svg.appendChild(node);
}

export function renderIncidents(
  incidents: Array<Incident & { seq?: number }>,
  onSelect: (incident: Incident) => void,
): void {
  const list = el("incident-list");
  list.innerHTML = "";
  for (const incident of incidents) {
    const row = document.createElement("li");
    row.className = `incident ${incident.severity}`;
    row.textContent = `${incident.incident_id} · tick ${incident.tick} · ${incident.severity} · ${incident.violated_rule} · ${incident.action_taken}`;
    row.onclick = () => onSelect(incident);
    list.appendChild(row);
  }
  el("incident-count").textContent = String(incidents.length);
}

export function renderIncidentDetail(incident: Incident | null): void {
  const pane = el("incident-detail");
  if (!incident) {
    pane.textContent = "select an incident";
    return;
  }
  pane.innerHTML = "";
  const head = document.createElement("div");
  head.className = "detail-head";
  head.textContent = `${incident.incident_id} / rule ${incident.violated_rule} / actors ${incident.actor_ids.join(", ")}`;
  const body = document.createElement("pre");
  body.textContent = JSON.stringify(incident.observed, null, 2);
  pane.append(head, body);
}

export function renderLineage(roots: LineageNode[], onTune: (runId: string) => void): void {
  const host = el("run-lineage");
  host.innerHTML = "";
  const paint = (node: LineageNode, depth: number) => {
    const row = document.createElement("div");
    row.className = `run-node outcome-${node.run.outcome}`;
    row.style.marginLeft = `${depth * 18}px`;
    row.textContent = `${node.run.run_id} · ${node.run.mode} · ${node.run.outcome} · incidents ${node.run.incidents} · rules [${node.run.rules_written.join(", ")}]`;
    if (node.run.outcome === "incident") {
      const button = document.createElement("button");
      button.textContent = "tune & rerun";
      button.onclick = () => onTune(node.run.run_id);
      row.appendChild(button);
    }
    host.appendChild(row);
    for (const child of node.children) paint(child, depth + 1);
  };
  for (const root of roots) paint(root, 0);
}

export function renderRules(rules: Rule[], onEdit: (rule: Rule) => void): void {
  const host = el("rule-list");
  host.innerHTML = "";
  for (const rule of rules) {
    const row = document.createElement("div");
    row.className = "rule-row";
    row.textContent = `${rule.rule_id} v${rule.version}  ${rule.description}  [${rule.association.join(", ")}]`;
    const button = document.createElement("button");
    button.textContent = "edit";
    button.onclick = () => onEdit(rule);
    row.appendChild(button);
    host.appendChild(row);
  }
}

export function renderLedger(total: number, blocks: LedgerBlock[], status: ChainStatus | null): void {
  const banner = el("chain-banner");
  if (status) {
    banner.textContent = status.intact
      ? "chain intact"
      : `chain BROKEN at block ${status.broken_index}: ${status.reason}`;
    banner.className = `banner ${status.intact ? "ok" : "broken"}`;
  }
  el("ledger-total").textContent = String(total);
  const host = el("ledger-blocks");
  host.innerHTML = "";
  for (const block of blocks) {
    const row = document.createElement("details");
    const summary = document.createElement("summary");
    summary.textContent = `#${block.index} · ${block.author} · ${block.entries.map((e) => e.kind).join(", ")} · ${block.hash.slice(0, 16)}…`;
    const body = document.createElement("pre");
    body.textContent = JSON.stringify(block.entries, null, 2);
    row.append(summary, body);
    host.appendChild(row);
  }
}

export function renderVerdicts(verdicts: Verdict[]): void {
  const host = el("verdict-cards");
  host.innerHTML = "";
  for (const verdict of verdicts) {
    const card = document.createElement("div");
    card.className = `verdict ${verdict.result}`;
    card.innerHTML = `<b>${verdict.property.id}</b><span class="result">${verdict.result}</span>` +
      `<span>k=${verdict.bound_k} · ${verdict.explored_states} states` +
      (verdict.wall_seconds !== undefined ? ` · ${verdict.wall_seconds.toFixed(2)}s` : "") + `</span>`;
    host.appendChild(card);
  }
}

export function renderReplay(cursor: ReplayCursor | null): void {
  const host = el("replay-view");
  if (!cursor || cursor.records.length === 0) {
    host.textContent = "no counterexample loaded";
    return;
  }
  const record: TraceRecord | undefined = cursor.records[cursor.index];
  if (!record) return;
  host.innerHTML = "";
  const head = document.createElement("div");
  head.textContent =
    `tick ${record.tick} · V=${record.velocity.toFixed(2)} · temp=${record.arm.object_temp.toFixed(1)}` +
    ` · task=${record.arm.task_status}` + (cursorAtViolation(cursor) ? "  ⚠ VIOLATION" : "");
  head.className = cursorAtViolation(cursor) ? "replay-violation" : "";
  const belt = document.createElement("div");
  belt.className = "belt-strip small";
  for (const obj of record.objects) {
    const chip = document.createElement("div");
    chip.className = `chassis ${obj.welded ? "welded" : ""}`;
    chip.style.left = `${Math.min(obj.position / 20, 1) * 100}%`;
    belt.appendChild(chip);
  }
  host.append(head, belt);
}

export function toast(text: string, kind: "info" | "error" = "info"): void {
  const host = el("toasts");
  const node = document.createElement("div");
  node.className = `toast ${kind}`;
  node.textContent = text;
  host.appendChild(node);
  setTimeout(() => node.remove(), 5000);
}
