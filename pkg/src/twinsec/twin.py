"""Virtual environment runtime: twin generation, runs, incidents.

The twin is generated from the engineering knowledge (one virtual
endpoint per declared device and sensor, message routes mirroring the
declared topology) with calibration and rule bindings pulled from the
ledger. It runs in two modes:

* simulation -- detached from the plant, trial-and-error under
  user-specified settings; the conveyor scenario gates the velocity
  setpoint and counts loaded chassis, the arm scenario welds a staged
  schedule under current/pressure setpoints with per-tick thermal bound
  checks and an equipment-health event at capacity. The control loop
  interlocks the belt while the arm holds a workpiece and resumes it
  after release;
* replication -- replays a recorded plant trace and applies the
  per-step consistency check (reading within calibration bounds AND the
  owning asset powered); failures invoke the bound rule set, route to
  the process-calibration or scheduling service, create/update a rule,
  and record an incident.

A zero-incident run is "optimal": its operating thresholds are persisted
as rules and the accepted settings recorded in the report. Incident runs
can be tuned and rerun with fresh settings; lineage is recorded.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .canonical import canonical_json, hexdigest_json
from .clock import SystemClock
from .errors import (
    CalibrationGap,
    ConfigInvalid,
    InvalidSpec,
    LedgerUnavailable,
    MissingSignal,
    NotTunable,
    Unauthorized,
)
from .icm import CalibrationRecord, DomainKnowledge, EngineeringKnowledge, parse_spec, validate_spec
from .ledger import EntryKind, Ledger
from .plant import (
    ActuatorCommand,
    FaultInjection,
    FaultKind,
    PlantConfig,
    PlantState,
    SensorType,
    TaskStatus,
    TraceRecord,
    initial_state,
    load_object,
    place_object,
    read_all_sensors,
    record_from_state,
    remove_object,
    step,
    validate_fault,
)
from .rules import (
    CountAtMost,
    Principal,
    Role,
    Rule,
    RuleEngine,
    SensorInBounds,
    TelemetrySnapshot,
    evaluate,
)

SYSTEM_PRINCIPAL = Principal("system", frozenset({Role.SYSTEM}))

NO_MATCHING_RULE = "no-matching-rule"

# shutdown policy: this many critical incidents on one asset inside the
# window switches the virtual asset off
SHUTDOWN_THRESHOLD = 3
SHUTDOWN_WINDOW_TICKS = 10

COOLDOWN_TICKS = 10  # idle gap between staged welds so the cool-down shows
SERIES_DEPTH = 32


class RunMode(str, Enum):
    SIMULATION = "Simulation"
    REPLICATION = "Replication"


class Outcome(str, Enum):
    OPTIMAL = "optimal"
    INCIDENT = "incident"
    CAPACITY_REACHED = "capacity_reached"


class Severity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    CRITICAL = "critical"


class Action(str, Enum):
    NONE = "none"
    SCHEDULING = "scheduling_service"
    CALIBRATION = "calibration_service"
    SHUTDOWN = "shutdown"


@dataclass(frozen=True)
class Bounds:
    lo: float
    hi: float

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def clamp(self, value: float) -> float:
        return min(max(value, self.lo), self.hi)

    def to_obj(self) -> list[float]:
        return [self.lo, self.hi]


@dataclass(frozen=True)
class TwinConfig:
    """Process-specific settings: threshold pairs, delay, model constants."""

    tau_v: Bounds = Bounds(1.0, 5.0)
    tau_o: Bounds = Bounds(0, 10)
    tau_c: Bounds = Bounds(1.0, 10.0)
    tau_p: Bounds = Bounds(10.0, 100.0)
    tau_t: Bounds = Bounds(20.0, 80.0)
    d: float = 3.0
    k_heat: float = 0.015
    k_cool: float = 0.5
    a_max_capacity: int = 5
    dt: float = 0.1
    max_ticks: int = 500

    def validate(self) -> None:
        for name in ("tau_v", "tau_o", "tau_c", "tau_p", "tau_t"):
            bounds: Bounds = getattr(self, name)
            if not (math.isfinite(bounds.lo) and math.isfinite(bounds.hi)):
                raise ConfigInvalid(f"{name} bounds must be finite")
            if bounds.lo > bounds.hi:
                raise ConfigInvalid(f"{name}: min {bounds.lo} > max {bounds.hi}")
        if not self.d > 0:
            raise ConfigInvalid("d must be > 0")
        if not self.dt > 0:
            raise ConfigInvalid("dt must be > 0")
        if self.a_max_capacity < 1:
            raise ConfigInvalid("a_max_capacity must be >= 1")
        if self.max_ticks < 1:
            raise ConfigInvalid("max_ticks must be >= 1")

    def settings(self) -> dict:
        return {
            "tau_v": self.tau_v.to_obj(),
            "tau_o": self.tau_o.to_obj(),
            "tau_c": self.tau_c.to_obj(),
            "tau_p": self.tau_p.to_obj(),
            "tau_t": self.tau_t.to_obj(),
            "d": self.d,
            "k_heat": self.k_heat,
            "k_cool": self.k_cool,
            "a_max_capacity": self.a_max_capacity,
            "dt": self.dt,
            "max_ticks": self.max_ticks,
        }

    to_obj = settings

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "TwinConfig":
        kwargs: dict[str, Any] = {}
        for name in ("tau_v", "tau_o", "tau_c", "tau_p", "tau_t"):
            if name in obj:
                lo, hi = obj[name]
                kwargs[name] = Bounds(float(lo), float(hi))
        for name in ("d", "k_heat", "k_cool", "dt"):
            if name in obj:
                kwargs[name] = float(obj[name])
        for name in ("a_max_capacity", "max_ticks"):
            if name in obj:
                kwargs[name] = int(obj[name])
        config = cls(**kwargs)
        config.validate()
        return config

    def plant_config(self, base: PlantConfig | None = None) -> PlantConfig:
        base = base or PlantConfig()
        return replace(
            base, k_heat=self.k_heat, k_cool=self.k_cool, weld_duration=self.d, dt=self.dt
        )


@dataclass(frozen=True)
class Incident:
    incident_id: str
    tick: int
    violated_rule: str  # "R-3@2" or "no-matching-rule"
    actor_ids: tuple[str, ...]
    observed: dict
    severity: Severity
    action_taken: Action

    def __post_init__(self) -> None:
        if self.action_taken is Action.SCHEDULING and self.violated_rule != NO_MATCHING_RULE:
            raise ValueError("scheduling_service requires violated_rule = no-matching-rule")

    def rule_ref(self) -> tuple[str, int] | None:
        if self.violated_rule == NO_MATCHING_RULE:
            return None
        rule_id, version = self.violated_rule.rsplit("@", 1)
        return rule_id, int(version)

    def to_obj(self) -> dict:
        return {
            "incident_id": self.incident_id,
            "tick": self.tick,
            "violated_rule": self.violated_rule,
            "actor_ids": list(self.actor_ids),
            "observed": self.observed,
            "severity": self.severity.value,
            "action_taken": self.action_taken.value,
        }


@dataclass(frozen=True)
class RunReport:
    run_id: str
    mode: RunMode
    config: TwinConfig
    trace: tuple[TraceRecord, ...]
    incidents: tuple[Incident, ...]
    o_count: int
    task_status: int
    rules_written: tuple[str, ...]
    outcome: Outcome
    events: tuple[dict, ...] = ()
    pe_settings: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    parent_run_id: str | None = None

    def __post_init__(self) -> None:
        if bool(self.incidents) != (self.outcome is Outcome.INCIDENT):
            raise ValueError("outcome=incident iff incidents non-empty")

    def to_obj(self) -> dict:
        return {
            "run_id": self.run_id,
            "mode": self.mode.value,
            "config": self.config.to_obj(),
            "trace": [r.to_obj() for r in self.trace],
            "incidents": [i.to_obj() for i in self.incidents],
            "o_count": self.o_count,
            "task_status": self.task_status,
            "rules_written": list(self.rules_written),
            "outcome": self.outcome.value,
            "events": list(self.events),
            "pe_settings": self.pe_settings,
            "inputs": self.inputs,
            "parent_run_id": self.parent_run_id,
        }

    def to_canonical(self) -> bytes:
        return canonical_json(self.to_obj())

    def trace_digest(self) -> str:
        return hexdigest_json([r.to_obj() for r in self.trace])


def run_log_lines(report: RunReport) -> list[str]:
    """Stable line grammar for the per-run event log.

    ``t=<time> tick=<tick> event=<kind> <key>=<value>...`` with keys in
    sorted order; one line per event, then per incident, in tick order.
    """
    dt = report.config.dt
    entries: list[tuple[int, int, str]] = []
    for event in report.events:
        tick = int(event.get("tick", 0))
        extras = " ".join(
            f"{k}={event[k]}" for k in sorted(event) if k not in ("tick", "kind")
        )
        line = f"t={round(tick * dt, 10)} tick={tick} event={event['kind']}"
        entries.append((tick, 0, line + (" " + extras if extras else "")))
    for incident in report.incidents:
        line = (
            f"t={round(incident.tick * dt, 10)} tick={incident.tick} event=incident "
            f"id={incident.incident_id} severity={incident.severity.value} "
            f"rule={incident.violated_rule} action={incident.action_taken.value} "
            f"actors={','.join(incident.actor_ids)}"
        )
        entries.append((incident.tick, 1, line))
    entries.sort(key=lambda e: (e[0], e[1]))
    header = f"run={report.run_id} mode={report.mode.value} outcome={report.outcome.value}"
    return [header] + [line for _, _, line in entries]


# --- twin generation --------------------------------------------------------

@dataclass
class BusMessage:
    seq: int
    src: str
    dst: str
    kind: str
    payload: dict


class MessageBus:
    """Ordered in-process message passing between virtual endpoints."""

    def __init__(self, routes: Iterable[tuple[str, str]]) -> None:
        self.routes = set(routes)
        self.log: list[BusMessage] = []

    def send(self, src: str, dst: str, kind: str, payload: dict) -> BusMessage:
        if (src, dst) not in self.routes:
            raise ValueError(f"no route {src} -> {dst}")
        message = BusMessage(len(self.log), src, dst, kind, payload)
        self.log.append(message)
        return message


@dataclass
class TwinInstance:
    ek: EngineeringKnowledge
    dk: tuple[DomainKnowledge, ...]
    endpoints: tuple[str, ...]
    routes: tuple[tuple[str, str], ...]
    calibration: dict[str, CalibrationRecord]
    bound_rules: list[Rule]
    warnings: list[str]
    ledger: Ledger
    engine: RuleEngine
    plant_config: PlantConfig
    clock: Any = field(default_factory=SystemClock)
    _run_seq: int = 0
    _run_inputs: dict = field(default_factory=dict)

    def next_run_id(self) -> str:
        self._run_seq += 1
        return f"run-{self._run_seq}"

    def new_bus(self) -> MessageBus:
        return MessageBus(self.routes)

    def hmi_for(self, asset_id: str) -> str | None:
        for src, dst in self.routes:
            if dst == asset_id:
                try:
                    if self.ek.device(src).device_type == "hmi":
                        return src
                except Exception:
                    continue
        return None

    def rebind_rules(self) -> None:
        """Refresh rule bindings from the ledger (latest version per id)."""
        latest: dict[str, Rule] = {}
        for _, entry in self.ledger.query(kind=EntryKind.RULE):
            rule = Rule.from_obj(entry.payload_obj())
            latest[rule.rule_id] = rule
        self.bound_rules = [latest[k] for k in sorted(latest)]


def generate_twin(
    ek: EngineeringKnowledge,
    dk: Iterable[DomainKnowledge] = (),
    ledger: Ledger | None = None,
    engine: RuleEngine | None = None,
    clock: Any = None,
    plant_config: PlantConfig | None = None,
) -> TwinInstance:
    report = validate_spec(ek)
    if not report.ok:
        raise InvalidSpec(
            "; ".join(f"{f.code}:{f.subject}" for f in report.findings)
        )
    if ledger is None:
        raise LedgerUnavailable("twin generation requires a ledger handle")

    endpoints = tuple(d.asset_id for d in ek.devices) + tuple(s.sensor_id for s in ek.sensors)
    routes: list[tuple[str, str]] = []
    for link in ek.topology:
        routes.append((link.src, link.dst))
        routes.append((link.dst, link.src))

    warnings: list[str] = []

    calibration: dict[str, CalibrationRecord] = {}
    spec_entries = ledger.query(kind=EntryKind.SPEC)
    if spec_entries:
        _, latest = spec_entries[-1]
        try:
            bundle = parse_spec(latest.payload_obj())
            calibration = {c.sensor_id: c for c in bundle.calibration}
        except Exception:
            warnings.append("latest specification snapshot on ledger failed to parse")
    else:
        warnings.append("no specification snapshot on ledger; twin calibration unbound")

    latest_rules: dict[str, Rule] = {}
    for _, entry in ledger.query(kind=EntryKind.RULE):
        rule = Rule.from_obj(entry.payload_obj())
        latest_rules[rule.rule_id] = rule
    if not latest_rules:
        warnings.append("ledger holds no rules; twin generated with zero bound rules")

    clock = clock or SystemClock()
    return TwinInstance(
        ek=ek,
        dk=tuple(dk),
        endpoints=endpoints,
        routes=tuple(routes),
        calibration=calibration,
        bound_rules=[latest_rules[k] for k in sorted(latest_rules)],
        warnings=warnings,
        ledger=ledger,
        engine=engine or RuleEngine(ledger, ek=ek, clock=clock),
        plant_config=plant_config or PlantConfig(),
        clock=clock,
    )


# --- the scenario driver -------------------------------------------------

@dataclass(frozen=True)
class SimInputs:
    """Closed-loop input schedule for a simulation run.

    velocity / current / pressure setpoints are issued at tick 0 through
    the HMI endpoints; load_ticks request chassis loads (deferred until
    the inter-load delay d has elapsed); weld_count stages that many
    workpieces at Station B one after another; auto_weld instead welds
    any unwelded chassis arriving at Station B.
    """

    velocity: float | None = None
    current: float | None = None
    pressure: float | None = None
    load_ticks: tuple[int, ...] = ()
    weld_count: int = 0
    auto_weld: bool = False

    def to_obj(self) -> dict:
        return {
            "velocity": self.velocity,
            "current": self.current,
            "pressure": self.pressure,
            "load_ticks": list(self.load_ticks),
            "weld_count": self.weld_count,
            "auto_weld": self.auto_weld,
        }

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "SimInputs":
        return cls(
            velocity=None if obj.get("velocity") is None else float(obj["velocity"]),
            current=None if obj.get("current") is None else float(obj["current"]),
            pressure=None if obj.get("pressure") is None else float(obj["pressure"]),
            load_ticks=tuple(int(t) for t in obj.get("load_ticks", ())),
            weld_count=int(obj.get("weld_count", 0)),
            auto_weld=bool(obj.get("auto_weld", False)),
        )


@dataclass
class DriveResult:
    records: list[TraceRecord]
    incidents: list[Incident]
    events: list[dict]
    detections: int
    final_state: PlantState
    rules_written: list[str]
    health_emitted: bool
    accepted: dict[str, float]


class _IncidentBook:
    """Incident recording with the shutdown policy and dedup bookkeeping."""

    def __init__(self) -> None:
        self.incidents: list[Incident] = []
        self.events: list[dict] = []
        self.suppressed_sensors: set[str] = set()
        self.shutdown_assets: set[str] = set()
        self._critical_ticks: dict[str, deque] = {}

    def record(
        self,
        tick: int,
        actor_ids: Sequence[str],
        observed: dict,
        matched: Rule | None,
        severity: Severity,
        action: Action,
    ) -> Incident:
        violated = (
            f"{matched.rule_id}@{matched.version}" if matched is not None else NO_MATCHING_RULE
        )
        asset = actor_ids[0] if actor_ids else ""
        if severity is Severity.CRITICAL and asset and asset not in self.shutdown_assets:
            window = self._critical_ticks.setdefault(asset, deque())
            window.append(tick)
            while window and window[0] <= tick - SHUTDOWN_WINDOW_TICKS:
                window.popleft()
            if len(window) >= SHUTDOWN_THRESHOLD:
                action = Action.SHUTDOWN  # supersedes the scheduling call
                self.shutdown_assets.add(asset)
                self.events.append({"kind": "service_call", "service": "shutdown", "tick": tick, "asset": asset})
        incident = Incident(
            incident_id=f"inc-{len(self.incidents) + 1}",
            tick=tick,
            violated_rule=violated,
            actor_ids=tuple(actor_ids),
            observed=observed,
            severity=severity,
            action_taken=action,
        )
        self.incidents.append(incident)
        return incident


def _find_matching_rule(
    rules: Sequence[Rule], snapshot: TelemetrySnapshot, implicated: set[str]
) -> Rule | None:
    """First bound rule whose evaluation fails and names one of the implicated ids."""
    for rule in rules:
        try:
            verdict = evaluate(rule, snapshot)
        except MissingSignal:
            continue
        if verdict.passed:
            continue
        named: set[str] = set()
        for atom in verdict.failing_atoms:
            named.update(atom.get("observed", {}).keys())
        if named & implicated or rule.association & implicated:
            return rule
    return None


def _observed(snapshot: TelemetrySnapshot, focus: dict | None = None) -> dict:
    obj = {
        "values": dict(snapshot.values),
        "statuses": dict(snapshot.statuses),
        "counters": dict(snapshot.counters),
    }
    if focus:
        obj["context"] = focus
    return obj


def snapshot_from_observed(observed: Mapping[str, Any]) -> TelemetrySnapshot:
    """Rebuild the evaluation snapshot an incident was judged against."""
    return TelemetrySnapshot(
        values=dict(observed.get("values", {})),
        statuses=dict(observed.get("statuses", {})),
        counters=dict(observed.get("counters", {})),
    )


class _ScenarioDriver:
    """Per-tick closed loop shared by the simulation runs and the explorer."""

    def __init__(
        self,
        config: TwinConfig,
        inputs: SimInputs,
        twin: TwinInstance | None = None,
        faults: Sequence[FaultInjection] = (),
        ticks: int | None = None,
        principal: Principal = SYSTEM_PRINCIPAL,
        persist: bool = True,
    ) -> None:
        config.validate()
        self.config = config
        self.inputs = inputs
        self.twin = twin
        self.faults = tuple(faults)
        self.ticks = ticks if ticks is not None else config.max_ticks
        self.principal = principal
        self.persist = persist and twin is not None
        self.plant_config = config.plant_config(twin.plant_config if twin else None)
        for fault in self.faults:
            validate_fault(self.plant_config, fault)
        self.bus = twin.new_bus() if twin else None
        self.bound_rules = list(twin.bound_rules) if twin else []
        self.book = _IncidentBook()
        self.rules_written: list[str] = []
        self.accepted: dict[str, float] = {}
        self.detections = 0

    # -- helpers ----------------------------------------------------------

    def _send_setpoint(self, plc: str, name: str, value: float) -> None:
        if self.bus is None or self.twin is None:
            return
        hmi = self.twin.hmi_for(plc)
        if hmi is not None:
            self.bus.send(hmi, plc, "setpoint", {name: value})
            self.bus.send(plc, hmi, "ack", {name: value})

    def _sensor_of_type(self, type_name: str) -> str:
        return self.plant_config.sensor_for_type(SensorType(type_name)).sensor_id

    def _snapshot(self, state: PlantState, extra_values: dict | None = None) -> TelemetrySnapshot:
        values = read_all_sensors(state, self.faults)
        if extra_values:
            values.update(extra_values)
        return TelemetrySnapshot(
            values=values,
            statuses={a: ("on" if on else "off") for a, on in state.assets_on.items()},
            counters={"o_count": self.detections},
        )

    def _upsert_bound_rule(self, pred, association: set[str], tick: int) -> None:
        if not self.persist or self.twin is None:
            return
        engine = self.twin.engine
        found = engine.find_by_association(association, type(pred))
        try:
            rule_id = engine.upsert_rule(
                self.principal, pred, association, existing=found.rule_id if found else None
            )
        except Unauthorized:
            self.book.events.append(
                {"kind": "rule_write_denied", "tick": tick, "by": self.principal.entity_id}
            )
            return
        if rule_id not in self.rules_written:
            self.rules_written.append(rule_id)

    def _gate_setpoint(
        self, tick: int, state: PlantState, name: str, value: float, bounds: Bounds, sensor_type: str, plc_asset: str
    ) -> bool:
        sensor_id = self._sensor_of_type(sensor_type)
        if bounds.contains(value):
            self._send_setpoint(plc_asset, name, value)
            self.accepted[name] = value
            self.book.events.append(
                {"kind": "setpoint_accepted", "tick": tick, "name": name, "value": value}
            )
            return True
        snapshot = self._snapshot(state, extra_values={sensor_id: value})
        matched = _find_matching_rule(self.bound_rules, snapshot, {sensor_id, plc_asset})
        self.book.events.append(
            {"kind": "setpoint_rejected", "tick": tick, "name": name, "value": value}
        )
        self.book.record(
            tick=tick,
            actor_ids=(plc_asset, sensor_id),
            observed=_observed(
                snapshot, {"requested": {name: value}, "bounds": bounds.to_obj()}
            ),
            matched=matched,
            severity=Severity.WARNING,
            action=Action.NONE,
        )
        return False

    # -- main loop ----------------------------------------------------------

    def run(self) -> DriveResult:
        cfg = self.config
        state = initial_state(self.plant_config)
        records: list[TraceRecord] = []
        pending_loads = deque(sorted(self.inputs.load_ticks))
        last_load_time: float | None = None
        self.detections = 0
        prev_detection = 0.0
        prev_task = state.arm.task_status
        health_emitted = False
        aborted_ids: set[int] = set()
        abort_pending = False
        welds_finished = 0
        # arm staging machine
        staging = self.inputs.weld_count > 0
        stage_phase = "stage" if staging else "off"
        cooldown_until = -1
        current_workpiece: int | None = None
        tamper_done: set[tuple[int, int]] = set()
        # welding interlock: the belt pauses while the arm holds a workpiece
        belt_paused = False
        resume_belt = False

        detection_sensor = self._sensor_of_type("ObjectDetection")
        velocity_sensor = self._sensor_of_type("Velocity")
        conveyor_asset = self.plant_config.sensor(velocity_sensor).asset_id
        arm_asset = self.plant_config.sensor(self._sensor_of_type("Current")).asset_id
        b_lo, b_hi = self.plant_config.station_b_window

        for t in range(self.ticks):
            # chassis load requests, deferred until the inter-load delay d elapsed
            while pending_loads and pending_loads[0] <= t:
                now = t * cfg.dt
                if last_load_time is not None and now - last_load_time < cfg.d - 1e-9:
                    break
                slot_blocked = any(
                    obj.position < self.plant_config.object_length for obj in state.belt_objects
                )
                if slot_blocked:
                    break
                state = load_object(state)
                last_load_time = now
                pending_loads.popleft()
                self.book.events.append(
                    {"kind": "object_loaded", "tick": t, "object_id": state.objects_loaded}
                )

            # staged welding: put the next workpiece under the gun
            commands: list[ActuatorCommand] = []
            if stage_phase == "stage" and welds_finished + len(aborted_ids) < self.inputs.weld_count:
                if t >= cooldown_until:
                    if current_workpiece is not None and any(
                        o.object_id == current_workpiece for o in state.belt_objects
                    ):
                        state = remove_object(state, current_workpiece)
                    if state.arm.objects_welded >= cfg.a_max_capacity and not health_emitted:
                        health_emitted = True
                        self.book.events.append(
                            {
                                "kind": "equipment_health_check",
                                "tick": t,
                                "asset": arm_asset,
                                "objects_welded": state.arm.objects_welded,
                            }
                        )
                    state = place_object(state, b_lo)
                    current_workpiece = state.objects_loaded
                    commands.append(ActuatorCommand("weld", 1))
                    stage_phase = "welding"
                    self.book.events.append(
                        {"kind": "weld_started", "tick": t, "object_id": current_workpiece}
                    )

            # sample the tick (loads included, commands take effect next tick)
            record = record_from_state(state, self.faults)
            records.append(record)

            # object counting via the detection sensor's rising edge; distinct
            # arrivals need a gap in window occupancy, which holds whenever
            # spacing V*d exceeds the window plus one tick of travel
            detection = record.sensors.get(detection_sensor, 0.0)
            if detection >= 0.5 and prev_detection < 0.5:
                self.detections += 1
                self.book.events.append({"kind": "object_detected", "tick": t, "count": self.detections})
                if self.detections > cfg.tau_o.hi:
                    snapshot = self._snapshot(state)
                    matched = _find_matching_rule(
                        self.bound_rules, snapshot, {detection_sensor, conveyor_asset, "o_count"}
                    )
                    self.book.record(
                        tick=t,
                        actor_ids=(conveyor_asset, detection_sensor),
                        observed=_observed(snapshot, {"bounds": cfg.tau_o.to_obj()}),
                        matched=matched,
                        severity=Severity.INFO,
                        action=Action.NONE,
                    )
                    self._upsert_bound_rule(
                        CountAtMost("o_count", int(cfg.tau_o.hi)), {detection_sensor}, t
                    )
            prev_detection = detection

            # welding-phase thermal guard, fed by the temperature sensor
            # (so sensor faults are what the guard actually sees)
            if state.arm.task_status is TaskStatus.WELDING and not abort_pending:
                temp_sensor = self._sensor_of_type("Temperature")
                temp = record.sensors.get(temp_sensor, state.arm.object_temp)
                if not cfg.tau_t.contains(temp):
                    snapshot = self._snapshot(state)
                    matched = _find_matching_rule(
                        self.bound_rules, snapshot, {temp_sensor, arm_asset}
                    )
                    self.book.record(
                        tick=t,
                        actor_ids=(arm_asset, temp_sensor),
                        observed=_observed(snapshot, {"bounds": cfg.tau_t.to_obj()}),
                        matched=matched,
                        severity=Severity.WARNING if matched else Severity.CRITICAL,
                        action=Action.NONE if matched else Action.SCHEDULING,
                    )
                    self._upsert_bound_rule(
                        SensorInBounds(temp_sensor, cfg.tau_t.lo, cfg.tau_t.hi), {temp_sensor}, t
                    )
                    commands.append(ActuatorCommand("weld", 0))
                    abort_pending = True
                    if state.arm.workpiece_id is not None:
                        aborted_ids.add(state.arm.workpiece_id)
                    self.book.events.append(
                        {"kind": "weld_aborted", "tick": t, "object_id": state.arm.workpiece_id, "temp": temp}
                    )

            # belt resumes one tick after the weld released the workpiece
            if resume_belt:
                resume_belt = False
                belt_paused = False
                if "velocity" in self.accepted:
                    commands.append(ActuatorCommand("motor", 1))
                    commands.append(ActuatorCommand("velocity", self.accepted["velocity"]))
                    self.book.events.append({"kind": "belt_resumed", "tick": t})

            # setpoints through the HMIs at tick 0
            if t == 0:
                if self.inputs.velocity is not None:
                    if self._gate_setpoint(
                        t, state, "velocity", self.inputs.velocity, cfg.tau_v, "Velocity", conveyor_asset
                    ):
                        commands.append(ActuatorCommand("motor", 1))
                        commands.append(ActuatorCommand("velocity", self.inputs.velocity))
                if self.inputs.current is not None:
                    if self._gate_setpoint(
                        t, state, "current", self.inputs.current, cfg.tau_c, "Current", arm_asset
                    ):
                        commands.append(ActuatorCommand("current", self.inputs.current))
                if self.inputs.pressure is not None:
                    if self._gate_setpoint(
                        t, state, "pressure", self.inputs.pressure, cfg.tau_p, "Pressure", arm_asset
                    ):
                        commands.append(ActuatorCommand("pressure", self.inputs.pressure))

            # auto-weld: weld whatever unwelded chassis is in reach
            if (
                self.inputs.auto_weld
                and state.arm.task_status is not TaskStatus.WELDING
                and not any(c.actuator_id == "weld" for c in commands)
            ):
                target = next(
                    (
                        o
                        for o in state.belt_objects
                        if b_lo <= o.position <= b_hi and not o.welded and o.object_id not in aborted_ids
                    ),
                    None,
                )
                if target is not None:
                    if state.arm.objects_welded >= cfg.a_max_capacity and not health_emitted:
                        health_emitted = True
                        self.book.events.append(
                            {
                                "kind": "equipment_health_check",
                                "tick": t,
                                "asset": arm_asset,
                                "objects_welded": state.arm.objects_welded,
                            }
                        )
                    commands.append(ActuatorCommand("weld", 1))
                    self.book.events.append(
                        {"kind": "weld_started", "tick": t, "object_id": target.object_id}
                    )

            # an attempted rule tamper surfaces as an RBAC denial incident
            for i, fault in enumerate(self.faults):
                key = (i, fault.active_window[0])
                if (
                    fault.kind is FaultKind.RULE_TAMPER_ATTEMPT
                    and fault.active_at(t)
                    and key not in tamper_done
                ):
                    tamper_done.add(key)
                    denied = False
                    if self.twin is not None:
                        mallory = Principal("mallory", frozenset({Role.PLANT_OPERATOR}))
                        try:
                            self.twin.engine.upsert_rule(
                                mallory, CountAtMost("o_count", 10 ** 6), {detection_sensor}
                            )
                        except Unauthorized:
                            denied = True
                    snapshot = TelemetrySnapshot(
                        values={}, statuses={}, counters={},
                        actions=(("rules.upsert", frozenset({"PlantOperator"})),),
                    )
                    self.book.record(
                        tick=t,
                        actor_ids=(fault.target,),
                        observed={"values": {}, "statuses": {}, "counters": {},
                                  "context": {"attempted_by": "mallory", "denied": denied}},
                        matched=None,
                        severity=Severity.INFO,
                        action=Action.NONE,
                    )
                    self.book.events.append(
                        {"kind": "rule_tamper_attempt", "tick": t, "target": fault.target, "denied": denied}
                    )

            # engage the interlock when a weld starts while the belt drives
            # (or would start driving this very step, e.g. a resume tick)
            if not belt_paused and any(c.actuator_id == "weld" and c.value for c in commands):
                turning_on = any(c.actuator_id == "motor" and c.value for c in commands)
                if state.motor_on or turning_on:
                    commands = [c for c in commands if c.actuator_id not in ("motor", "velocity")]
                    commands.append(ActuatorCommand("motor", 0))
                    belt_paused = True
                    self.book.events.append({"kind": "belt_paused", "tick": t})

            new_state = step(state, commands, self.faults, dt=cfg.dt)

            # weld phase transitions observed after the step
            if prev_task is TaskStatus.WELDING and new_state.arm.task_status is TaskStatus.DONE:
                welds_finished += 1
                self.book.events.append(
                    {
                        "kind": "weld_completed",
                        "tick": new_state.tick,
                        "object_id": new_state.arm.workpiece_id,
                        "objects_welded": new_state.arm.objects_welded,
                    }
                )
                if staging:
                    stage_phase = "stage"
                    cooldown_until = new_state.tick + COOLDOWN_TICKS
                if belt_paused:
                    resume_belt = True
            if prev_task is TaskStatus.WELDING and new_state.arm.task_status is TaskStatus.IDLE:
                abort_pending = False
                if staging:
                    stage_phase = "stage"
                    cooldown_until = new_state.tick + COOLDOWN_TICKS
                if belt_paused:
                    resume_belt = True
            prev_task = new_state.arm.task_status
            state = new_state

        return DriveResult(
            records=records,
            incidents=self.book.incidents,
            events=self.book.events,
            detections=self.detections,
            final_state=state,
            rules_written=self.rules_written,
            health_emitted=health_emitted,
            accepted=self.accepted,
        )


def _persist_incidents(twin: TwinInstance, report: RunReport, principal: Principal) -> None:
    if not report.incidents:
        return
    entries = [
        twin.ledger.make_entry(
            EntryKind.INCIDENT,
            {**incident.to_obj(), "run_id": report.run_id, "trace_digest": report.trace_digest()},
        )
        for incident in report.incidents
    ]
    twin.ledger.append(entries, principal)


def _persist_optimal_rules(
    twin: TwinInstance,
    config: TwinConfig,
    scenario: str,
    principal: Principal,
    rules_written: list[str],
) -> None:
    """Persist the operating thresholds of a zero-incident run as rules."""
    plant_cfg = twin.plant_config

    def sensor_of(type_name: str) -> str:
        return plant_cfg.sensor_for_type(SensorType(type_name)).sensor_id

    engine = twin.engine
    pairs = []
    if scenario in ("conveyor", "combined"):
        pairs.append((SensorInBounds(sensor_of("Velocity"), config.tau_v.lo, config.tau_v.hi), {sensor_of("Velocity")}))
        pairs.append((CountAtMost("o_count", int(config.tau_o.hi)), {sensor_of("ObjectDetection")}))
    if scenario in ("arm", "combined"):
        pairs.append((SensorInBounds(sensor_of("Current"), config.tau_c.lo, config.tau_c.hi), {sensor_of("Current")}))
        pairs.append((SensorInBounds(sensor_of("Pressure"), config.tau_p.lo, config.tau_p.hi), {sensor_of("Pressure")}))
        pairs.append((SensorInBounds(sensor_of("Temperature"), config.tau_t.lo, config.tau_t.hi), {sensor_of("Temperature")}))
    for pred, association in pairs:
        found = engine.find_by_association(association, type(pred))
        rule_id = engine.upsert_rule(
            principal, pred, association, existing=found.rule_id if found else None
        )
        if rule_id not in rules_written:
            rules_written.append(rule_id)


def _build_report(
    twin: TwinInstance,
    mode: RunMode,
    config: TwinConfig,
    result: DriveResult,
    inputs_obj: dict,
    o_count: int,
    scenario: str,
    principal: Principal,
    parent_run_id: str | None = None,
) -> RunReport:
    if result.incidents:
        outcome = Outcome.INCIDENT
    elif result.health_emitted:
        outcome = Outcome.CAPACITY_REACHED
    else:
        outcome = Outcome.OPTIMAL
    rules_written = list(result.rules_written)
    if outcome is not Outcome.INCIDENT and mode is RunMode.SIMULATION:
        _persist_optimal_rules(twin, config, scenario, principal, rules_written)
    pe_settings = {"accepted": dict(result.accepted), "settings": config.settings()}
    report = RunReport(
        run_id=twin.next_run_id(),
        mode=mode,
        config=config,
        trace=tuple(result.records),
        incidents=tuple(result.incidents),
        o_count=o_count,
        task_status=int(result.final_state.arm.task_status),
        rules_written=tuple(rules_written),
        outcome=outcome,
        events=tuple(result.events),
        pe_settings=pe_settings,
        inputs=inputs_obj,
        parent_run_id=parent_run_id,
    )
    _persist_incidents(twin, report, principal)
    return report


def run_conveyor_sim(
    twin: TwinInstance,
    config: TwinConfig,
    inputs: SimInputs,
    faults: Sequence[FaultInjection] = (),
    principal: Principal = SYSTEM_PRINCIPAL,
    parent_run_id: str | None = None,
) -> RunReport:
    """Conveyor-belt scenario: gated velocity, chassis loads, object count."""
    config.validate()
    sim = SimInputs(
        velocity=inputs.velocity,
        load_ticks=inputs.load_ticks,
    )
    driver = _ScenarioDriver(config, sim, twin=twin, faults=faults, principal=principal)
    result = driver.run()
    report = _build_report(
        twin, RunMode.SIMULATION, config, result,
        {"scenario": "conveyor", **sim.to_obj()},
        o_count=result.detections, scenario="conveyor", principal=principal,
        parent_run_id=parent_run_id,
    )
    twin._run_inputs[report.run_id] = ("conveyor", sim, tuple(faults), None)
    return report


def run_arm_sim(
    twin: TwinInstance,
    config: TwinConfig,
    inputs: SimInputs,
    faults: Sequence[FaultInjection] = (),
    principal: Principal = SYSTEM_PRINCIPAL,
    parent_run_id: str | None = None,
) -> RunReport:
    """Robotic-arm scenario: staged welds under current/pressure setpoints."""
    config.validate()
    sim = SimInputs(
        current=inputs.current,
        pressure=inputs.pressure,
        weld_count=inputs.weld_count,
    )
    ticks = min(
        config.max_ticks,
        max(1, sim.weld_count) * (int(round(config.d / config.dt)) + COOLDOWN_TICKS + 4) + COOLDOWN_TICKS,
    )
    driver = _ScenarioDriver(config, sim, twin=twin, faults=faults, ticks=ticks, principal=principal)
    result = driver.run()
    report = _build_report(
        twin, RunMode.SIMULATION, config, result,
        {"scenario": "arm", **sim.to_obj()},
        o_count=result.final_state.arm.objects_welded, scenario="arm", principal=principal,
        parent_run_id=parent_run_id,
    )
    twin._run_inputs[report.run_id] = ("arm", sim, tuple(faults), None)
    return report


def replicate(
    twin: TwinInstance,
    pe_trace: Sequence[TraceRecord],
    calibration: Sequence[CalibrationRecord] | None = None,
    config: TwinConfig | None = None,
    principal: Principal = SYSTEM_PRINCIPAL,
    parent_run_id: str | None = None,
) -> RunReport:
    """Replay a plant trace and check per-step consistency.

    CC at each step = reading within its calibration bounds AND the
    owning asset reported on. A failing step invokes the bound rule set:
    a matching rule routes to the process-calibration service (nearest
    in-bounds setting proposed), no match routes to the scheduling
    service (asset flagged, duplicates from that sensor suppressed);
    both paths create/update a rule and record an incident.
    """
    config = config or TwinConfig()
    config.validate()
    if calibration is not None:
        cal_map = {c.sensor_id: c for c in calibration}
    else:
        cal_map = dict(twin.calibration)
    if not pe_trace:
        raise CalibrationGap("empty trace")
    trace_sensors = sorted({sid for record in pe_trace for sid in record.sensors})
    missing = [sid for sid in trace_sensors if sid not in cal_map]
    if missing:
        raise CalibrationGap(f"no calibration for sensor(s) {missing}")
    unknown = [sid for sid in trace_sensors if sid not in twin.ek.sensor_ids]
    if unknown:
        raise CalibrationGap(f"trace sensor(s) {unknown} not in engineering knowledge")

    book = _IncidentBook()
    rules_written: list[str] = []
    detection_sensor = next(
        (s.sensor_id for s in twin.ek.sensors if s.sensor_type == "ObjectDetection"), None
    )
    detections = 0
    prev_detection = 0.0
    series: dict[str, deque] = {sid: deque(maxlen=SERIES_DEPTH) for sid in trace_sensors}
    upserted_sensors: set[str] = set()

    for record in pe_trace:
        for sid in trace_sensors:
            if sid in record.sensors:
                series[sid].append(record.sensors[sid])
        if detection_sensor and detection_sensor in record.sensors:
            value = record.sensors[detection_sensor]
            if value >= 0.5 and prev_detection < 0.5:
                detections += 1
            prev_detection = value

        snapshot = TelemetrySnapshot(
            values=dict(record.sensors),
            statuses={a: ("on" if on else "off") for a, on in record.assets_on.items()},
            counters={"o_count": detections},
            series={sid: tuple(series[sid]) for sid in trace_sensors},
        )

        for sid in trace_sensors:
            if sid not in record.sensors:
                continue
            if sid in book.suppressed_sensors:
                continue
            sensor_spec = twin.ek.sensor(sid)
            asset = sensor_spec.asset_id
            if asset in book.shutdown_assets:
                continue
            cal = cal_map[sid]
            value = record.sensors[sid]
            asset_on = record.assets_on.get(asset, False)
            cc = (cal.tau_min <= value <= cal.tau_max) and asset_on
            if cc:
                continue

            matched = _find_matching_rule(twin.bound_rules, snapshot, {sid, asset})
            focus = {
                "sensor_id": sid,
                "reading": value,
                "tau": [cal.tau_min, cal.tau_max],
                "asset_status": "on" if asset_on else "off",
            }
            if matched is not None:
                focus["proposed_setting"] = max(cal.tau_min, min(value, cal.tau_max))
                action = Action.CALIBRATION
                severity = Severity.WARNING
                book.events.append(
                    {"kind": "service_call", "service": "calibration", "tick": record.tick, "sensor": sid}
                )
            else:
                action = Action.SCHEDULING
                severity = Severity.CRITICAL
                book.suppressed_sensors.add(sid)
                book.events.append(
                    {"kind": "service_call", "service": "scheduling", "tick": record.tick, "sensor": sid}
                )
            book.record(
                tick=record.tick,
                actor_ids=(asset, sid),
                observed=_observed(snapshot, focus),
                matched=matched,
                severity=severity,
                action=action,
            )
            if sid not in upserted_sensors:
                upserted_sensors.add(sid)
                engine = twin.engine
                pred = SensorInBounds(sid, cal.tau_min, cal.tau_max)
                found = engine.find_by_association({sid}, SensorInBounds)
                try:
                    rule_id = engine.upsert_rule(
                        principal, pred, {sid}, existing=found.rule_id if found else None
                    )
                    if rule_id not in rules_written:
                        rules_written.append(rule_id)
                except Unauthorized:
                    book.events.append(
                        {"kind": "rule_write_denied", "tick": record.tick, "by": principal.entity_id}
                    )

    outcome = Outcome.INCIDENT if book.incidents else Outcome.OPTIMAL
    report = RunReport(
        run_id=twin.next_run_id(),
        mode=RunMode.REPLICATION,
        config=config,
        trace=tuple(pe_trace),
        incidents=tuple(book.incidents),
        o_count=detections,
        task_status=int(pe_trace[-1].arm.get("task_status", 0)),
        rules_written=tuple(rules_written),
        outcome=outcome,
        events=tuple(book.events),
        pe_settings={"accepted": {}, "settings": config.settings()},
        inputs={
            "scenario": "replication",
            "trace_length": len(pe_trace),
            "trace_digest": hexdigest_json([r.to_obj() for r in pe_trace]),
        },
        parent_run_id=parent_run_id,
    )
    _persist_incidents(twin, report, principal)
    twin._run_inputs[report.run_id] = ("replication", tuple(pe_trace), tuple(cal_map.values()), None)
    return report


def tune_and_rerun(
    twin: TwinInstance,
    previous: RunReport,
    new_config: TwinConfig,
    principal: Principal = SYSTEM_PRINCIPAL,
) -> RunReport:
    """Rerun a failed run's mode and inputs under fresh settings."""
    if previous.outcome is not Outcome.INCIDENT:
        raise NotTunable(f"run {previous.run_id} produced no incident")
    new_config.validate()
    if previous.run_id not in twin._run_inputs:
        raise NotTunable(f"run {previous.run_id} inputs are not registered with this twin")
    scenario, payload, extra, _ = twin._run_inputs[previous.run_id]
    if scenario == "conveyor":
        return run_conveyor_sim(
            twin, new_config, payload, faults=extra, principal=principal, parent_run_id=previous.run_id
        )
    if scenario == "arm":
        return run_arm_sim(
            twin, new_config, payload, faults=extra, principal=principal, parent_run_id=previous.run_id
        )
    return replicate(
        twin, payload, calibration=extra, config=new_config, principal=principal,
        parent_run_id=previous.run_id,
    )
