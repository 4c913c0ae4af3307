"""Server-side state: the stream hub, the live plant room, app wiring."""

from __future__ import annotations

import asyncio
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from ..clock import LogicalClock, SystemClock
from ..errors import NotFound, SetpointOutOfBounds
from ..icm import SpecBundle
from ..ledger import EntryKind, Ledger
from ..plant import (
    ActuatorCommand,
    FaultInjection,
    PlantState,
    SensorType,
    initial_state,
    load_object,
    record_from_state,
    step,
    validate_fault,
)
from ..reference import bootstrap_world
from ..rules import Principal, RuleEngine, TelemetrySnapshot
from ..twin import (
    Action,
    Bounds,
    Incident,
    NO_MATCHING_RULE,
    RunReport,
    Severity,
    SYSTEM_PRINCIPAL,
    TwinConfig,
    TwinInstance,
    _find_matching_rule,
    _observed,
    generate_twin,
    run_log_lines,
)
from .auth import SessionStore
from .config import ServiceConfig


class StreamHub:
    """Ordered fan-out of telemetry/incident/event messages.

    One global monotone sequence; history keeps every incident and the
    newest ``buffer`` telemetry/event messages, so reconnecting clients
    can resume from their last seen sequence number (at-least-once).
    """

    def __init__(self, buffer: int = 4096) -> None:
        self._buffer = buffer
        self._seq = 0
        self._incidents: list[dict] = []
        self._recent: deque[dict] = deque(maxlen=buffer)
        self._queues: list[asyncio.Queue] = []
        self._lock = threading.Lock()

    def publish(self, channel: str, payload: dict) -> dict:
        with self._lock:
            self._seq += 1
            message = {"seq": self._seq, "channel": channel, "payload": payload}
            if channel == "incident":
                self._incidents.append(message)
            else:
                self._recent.append(message)
            queues = list(self._queues)
        for queue in queues:
            try:
                queue.put_nowait(message)
            except asyncio.QueueFull:
                # drop the oldest telemetry message; never drop incidents
                self._drop_oldest_telemetry(queue)
                try:
                    queue.put_nowait(message)
                except asyncio.QueueFull:
                    pass
        return message

    @staticmethod
    def _drop_oldest_telemetry(queue: asyncio.Queue) -> None:
        kept = []
        dropped = False
        while True:
            try:
                item = queue.get_nowait()
            except asyncio.QueueEmpty:
                break
            if not dropped and item["channel"] == "telemetry":
                dropped = True
                continue
            kept.append(item)
        for item in kept:
            try:
                queue.put_nowait(item)
            except asyncio.QueueFull:
                break

    def backlog(self, since: int = 0) -> list[dict]:
        with self._lock:
            merged = [m for m in self._incidents if m["seq"] > since]
            merged += [m for m in self._recent if m["seq"] > since]
        return sorted(merged, key=lambda m: m["seq"])

    def subscribe(self) -> asyncio.Queue:
        queue: asyncio.Queue = asyncio.Queue(maxsize=self._buffer)
        with self._lock:
            self._queues.append(queue)
        return queue

    def unsubscribe(self, queue: asyncio.Queue) -> None:
        with self._lock:
            if queue in self._queues:
                self._queues.remove(queue)

    @property
    def incident_count(self) -> int:
        with self._lock:
            return len(self._incidents)


class PlantRoom:
    """The live interactive plant: one stepper, queued commands, a stream.

    Setpoints are gated by the active TwinConfig bounds; a forced
    out-of-bounds request is rejected *and* recorded as an incident so
    the analyst panel sees the attempt.
    """

    def __init__(
        self,
        hub: StreamHub,
        twin: TwinInstance,
        config: TwinConfig,
        principal: Principal = SYSTEM_PRINCIPAL,
    ) -> None:
        self.hub = hub
        self.twin = twin
        self.config = config
        self.state: PlantState = initial_state(twin.plant_config)
        self.faults: list[FaultInjection] = []
        self.incidents: list[Incident] = []
        self.rate: float = 1.0
        self._pending: list[ActuatorCommand] = []
        self._principal = principal
        self._task: asyncio.Task | None = None
        self._lock = threading.Lock()

    # -- control -----------------------------------------------------------

    def bounds_for(self, name: str) -> Bounds:
        return {
            "velocity": self.config.tau_v,
            "current": self.config.tau_c,
            "pressure": self.config.tau_p,
        }[name]

    def _sensor_for(self, name: str) -> str:
        type_by_name = {
            "velocity": SensorType.VELOCITY,
            "current": SensorType.CURRENT,
            "pressure": SensorType.PRESSURE,
        }
        return self.twin.plant_config.sensor_for_type(type_by_name[name]).sensor_id

    def apply_setpoint(self, name: str, value: float, author: Principal) -> dict:
        if name == "motor":
            # binary switch, not bounds-gated
            with self._lock:
                self._pending.append(ActuatorCommand("motor", 1 if value else 0))
            self.hub.publish(
                "event",
                {"kind": "setpoint_accepted", "name": "motor", "value": 1 if value else 0, "by": author.entity_id},
            )
            return {"accepted": True, "name": "motor", "value": 1 if value else 0}
        if name not in ("velocity", "current", "pressure"):
            raise NotFound(f"unknown setpoint {name!r}")
        bounds = self.bounds_for(name)
        if not bounds.contains(value):
            incident = self._record_setpoint_incident(name, value, bounds, author)
            raise SetpointOutOfBounds(
                f"{name}={value} outside [{bounds.lo}, {bounds.hi}] (incident {incident.incident_id})"
            )
        with self._lock:
            if name == "velocity":
                self._pending.append(ActuatorCommand("motor", 1))
            self._pending.append(ActuatorCommand(name, value))
        self.hub.publish(
            "event",
            {"kind": "setpoint_accepted", "name": name, "value": value, "by": author.entity_id},
        )
        return {"accepted": True, "name": name, "value": value}

    def _record_setpoint_incident(
        self, name: str, value: float, bounds: Bounds, author: Principal
    ) -> Incident:
        sensor_id = self._sensor_for(name)
        asset = self.twin.plant_config.sensor(sensor_id).asset_id
        snapshot = TelemetrySnapshot(
            values={sensor_id: value},
            statuses={a: ("on" if on else "off") for a, on in self.state.assets_on.items()},
            counters={"o_count": 0},
        )
        matched = _find_matching_rule(self.twin.bound_rules, snapshot, {sensor_id, asset})
        incident = Incident(
            incident_id=f"plant-inc-{len(self.incidents) + 1}",
            tick=self.state.tick,
            violated_rule=(
                f"{matched.rule_id}@{matched.version}" if matched else NO_MATCHING_RULE
            ),
            actor_ids=(asset, sensor_id),
            observed=_observed(
                snapshot,
                {"requested": {name: value}, "bounds": bounds.to_obj(), "by": author.entity_id},
            ),
            severity=Severity.WARNING,
            action_taken=Action.NONE,
        )
        with self._lock:
            self.incidents.append(incident)
        self.hub.publish("incident", {**incident.to_obj(), "run_id": None, "source": "plant"})
        try:
            self.twin.ledger.append(
                [self.twin.ledger.make_entry(EntryKind.INCIDENT, incident.to_obj())],
                self._principal,
            )
        except Exception:
            pass
        return incident

    def motor(self, on: bool) -> None:
        with self._lock:
            self._pending.append(ActuatorCommand("motor", 1 if on else 0))

    def load_chassis(self) -> dict:
        with self._lock:
            self.state = load_object(self.state)
            object_id = self.state.objects_loaded
        self.hub.publish("event", {"kind": "object_loaded", "object_id": object_id})
        return {"object_id": object_id}

    def inject_fault(self, fault: FaultInjection, author: Principal) -> None:
        validate_fault(self.twin.plant_config, fault)
        with self._lock:
            self.faults.append(fault)
        self.hub.publish(
            "event",
            {
                "kind": "fault_injected",
                "fault": {
                    "kind": fault.kind.value,
                    "target": fault.target,
                    "magnitude": fault.magnitude,
                    "window": list(fault.active_window),
                },
                "by": author.entity_id,
            },
        )

    # -- stepping -----------------------------------------------------------

    def step_n(self, n: int) -> dict:
        last = None
        for _ in range(n):
            with self._lock:
                commands, self._pending = self._pending, []
                self.state = step(self.state, commands, self.faults, dt=self.twin.plant_config.dt)
                record = record_from_state(self.state, self.faults)
            last = record.to_obj()
            self.hub.publish("telemetry", last)
        return {"tick": self.state.tick, "record": last}

    def telemetry(self) -> dict:
        with self._lock:
            return record_from_state(self.state, self.faults).to_obj()

    async def _loop(self) -> None:
        dt = self.twin.plant_config.dt
        while True:
            self.step_n(1)
            await asyncio.sleep(max(dt / max(self.rate, 1e-6), 1e-3))

    def start(self, rate: float = 1.0) -> None:
        self.rate = rate
        if self._task is None or self._task.done():
            self._task = asyncio.get_running_loop().create_task(self._loop())

    def stop(self) -> None:
        if self._task is not None:
            self._task.cancel()
            self._task = None

    @property
    def running(self) -> bool:
        return self._task is not None and not self._task.done()


@dataclass
class AppState:
    """Everything one server process owns."""

    config: ServiceConfig
    clock: Any
    bundle: SpecBundle
    ledger: Ledger
    engine: RuleEngine
    twin: TwinInstance
    sessions: SessionStore
    hub: StreamHub
    room: PlantRoom
    active_config: TwinConfig
    runs: dict[str, RunReport] = field(default_factory=dict)
    run_order: list[str] = field(default_factory=list)

    def register_run(self, report: RunReport) -> None:
        self.runs[report.run_id] = report
        self.run_order.append(report.run_id)
        for incident in report.incidents:
            self.hub.publish(
                "incident", {**incident.to_obj(), "run_id": report.run_id, "source": "run"}
            )
        self.hub.publish(
            "event",
            {
                "kind": "run_completed",
                "run_id": report.run_id,
                "mode": report.mode.value,
                "outcome": report.outcome.value,
                "parent_run_id": report.parent_run_id,
            },
        )

    def run_report(self, run_id: str) -> RunReport:
        if run_id not in self.runs:
            raise NotFound(f"run {run_id!r} not found")
        return self.runs[run_id]

    def run_log(self, run_id: str) -> str:
        return "\n".join(run_log_lines(self.run_report(run_id))) + "\n"

    def all_incidents(self) -> list[dict]:
        out: list[dict] = []
        for run_id in self.run_order:
            report = self.runs[run_id]
            out += [{**i.to_obj(), "run_id": run_id, "source": "run"} for i in report.incidents]
        out += [{**i.to_obj(), "run_id": None, "source": "plant"} for i in self.room.incidents]
        return out

    def replace_spec(self, bundle: SpecBundle) -> None:
        """Adopt a new specification: chain a snapshot, regenerate the twin."""
        self.ledger.append(
            [self.ledger.make_entry(EntryKind.SPEC, bundle.to_obj())], SYSTEM_PRINCIPAL
        )
        engine = RuleEngine(self.ledger, ek=bundle.ek, clock=self.clock)
        twin = generate_twin(
            bundle.ek,
            bundle.domain_knowledge,
            self.ledger,
            engine=engine,
            clock=self.clock,
        )
        self.bundle = bundle
        self.engine = engine
        self.twin = twin
        self.room.twin = twin


def build_state(config: ServiceConfig) -> AppState:
    clock = LogicalClock() if config.logical_clock else SystemClock()
    world = bootstrap_world(clock=clock, key_seed=config.key_seed)
    sessions = SessionStore(config.tokens, ttl=config.session_ttl)
    hub = StreamHub(buffer=config.telemetry_buffer)
    active = TwinConfig()
    room = PlantRoom(hub, world.twin, active)
    return AppState(
        config=config,
        clock=clock,
        bundle=world.bundle,
        ledger=world.ledger,
        engine=world.engine,
        twin=world.twin,
        sessions=sessions,
        hub=hub,
        room=room,
        active_config=active,
    )
