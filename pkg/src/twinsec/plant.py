"""Discrete-time simulation of the physical assembly line.

The plant is a motor-driven conveyor belt moving chassis from the loading
point (Station A) to the welding point (Station B), plus a robotic arm
performing spot welds with a simple thermal model:

* heating while welding: object_temp += k_heat * current * pressure * dt
  per tick, so a weld of duration ``d`` peaks at
  init_temp + k_heat * C * P * d;
* exponential cool-down toward init_temp after the task completes.

All mutation flows through :func:`step` / :func:`load_object`, which
return new :class:`PlantState` values; states are immutable once
produced and safe to hand across threads. Fault injection covers sensor
offsets, stuck sensors, and actuator overrides; sensor faults are
applied at read time so the state itself stays truthful.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    NonFiniteCommand,
    SlotOccupied,
    TraceParse,
    UnknownActuator,
    UnknownSensor,
)

POWER_PREFIX = "power:"


class SensorType(str, Enum):
    VELOCITY = "Velocity"
    OBJECT_DETECTION = "ObjectDetection"
    CURRENT = "Current"
    PRESSURE = "Pressure"
    TEMPERATURE = "Temperature"


class TaskStatus(IntEnum):
    IDLE = 0
    DONE = 1
    WELDING = 2


class FaultKind(str, Enum):
    SENSOR_OFFSET = "SensorOffset"
    SENSOR_STUCK = "SensorStuck"
    ACTUATOR_OVERRIDE = "ActuatorOverride"
    RULE_TAMPER_ATTEMPT = "RuleTamperAttempt"


@dataclass(frozen=True)
class SensorDef:
    sensor_id: str
    sensor_type: SensorType
    asset_id: str


# Reference wiring: the conveyor instruments report through PLC1, the arm
# instruments through PLC2.
DEFAULT_SENSORS: tuple[SensorDef, ...] = (
    SensorDef("s1", SensorType.VELOCITY, "PLC1"),
    SensorDef("s2", SensorType.OBJECT_DETECTION, "PLC1"),
    SensorDef("s3", SensorType.CURRENT, "PLC2"),
    SensorDef("s4", SensorType.PRESSURE, "PLC2"),
    SensorDef("s5", SensorType.TEMPERATURE, "PLC2"),
)


@dataclass(frozen=True)
class PlantConfig:
    """Geometry and physical constants of the line.

    Lengths are belt-length units measured from Station A; the detection
    window is where the Station-A proximity sensor sees a chassis, the
    Station-B window is where the arm can reach one.
    """

    belt_length: float = 20.0
    object_length: float = 1.0
    detection_window: tuple[float, float] = (0.0, 0.5)
    station_b_window: tuple[float, float] = (15.0, 15.5)
    init_temp: float = 25.0
    k_heat: float = 0.015
    k_cool: float = 0.5
    weld_duration: float = 3.0
    dt: float = 0.1
    sensors: tuple[SensorDef, ...] = DEFAULT_SENSORS

    def sensor(self, sensor_id: str) -> SensorDef:
        for sensor in self.sensors:
            if sensor.sensor_id == sensor_id:
                return sensor
        raise UnknownSensor(sensor_id)

    def sensor_for_type(self, sensor_type: SensorType) -> SensorDef:
        for sensor in self.sensors:
            if sensor.sensor_type == sensor_type:
                return sensor
        raise UnknownSensor(sensor_type.value)

    @property
    def asset_ids(self) -> tuple[str, ...]:
        seen: list[str] = []
        for sensor in self.sensors:
            if sensor.asset_id not in seen:
                seen.append(sensor.asset_id)
        return tuple(seen)

    @property
    def actuator_ids(self) -> tuple[str, ...]:
        base = ("motor", "velocity", "current", "pressure", "weld")
        return base + tuple(POWER_PREFIX + a for a in self.asset_ids)


@dataclass(frozen=True)
class ObjectOnBelt:
    object_id: int
    position: float
    loaded_at: float
    welded: bool = False


@dataclass(frozen=True)
class ArmState:
    current: float = 0.0
    pressure: float = 0.0
    object_temp: float = 25.0
    task_status: TaskStatus = TaskStatus.IDLE
    weld_started_at: float | None = None
    objects_welded: int = 0
    workpiece_id: int | None = None


@dataclass(frozen=True)
class PlantState:
    config: PlantConfig
    tick: int = 0
    time: float = 0.0
    motor_on: bool = False
    velocity: float = 0.0
    belt_objects: tuple[ObjectOnBelt, ...] = ()
    arm: ArmState = ArmState()
    rng_seed: int = 0
    # asset_id -> powered flag; assets are powered up from t=0 and only
    # go dark through an explicit power command or actuator override.
    assets_on: dict[str, bool] = field(default_factory=dict)
    objects_loaded: int = 0
    # sensor_id -> value latched when a SensorStuck fault activated
    stuck_values: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SensorReading:
    sensor_id: str
    sensor_type: SensorType
    value: float
    timestamp: float
    asset_id: str


@dataclass(frozen=True)
class ActuatorCommand:
    actuator_id: str
    value: float


@dataclass(frozen=True)
class FaultInjection:
    kind: FaultKind
    target: str
    magnitude: float
    active_window: tuple[int, int]

    def __post_init__(self) -> None:
        start, end = self.active_window
        if end < start:
            raise ValueError(f"empty fault window: {self.active_window}")
        if not math.isfinite(self.magnitude):
            raise ValueError("fault magnitude must be finite")

    def active_at(self, tick: int) -> bool:
        start, end = self.active_window
        return start <= tick <= end


def validate_fault(config: PlantConfig, fault: FaultInjection) -> None:
    """Reject fault targets the plant does not know before a run starts."""
    if fault.kind in (FaultKind.SENSOR_OFFSET, FaultKind.SENSOR_STUCK):
        config.sensor(fault.target)
    elif fault.kind is FaultKind.ACTUATOR_OVERRIDE:
        if fault.target not in config.actuator_ids:
            raise UnknownActuator(fault.target)
    # rule-tamper targets name a rule id; the rule layer owns that namespace


def initial_state(config: PlantConfig | None = None, rng_seed: int = 0) -> PlantState:
    config = config or PlantConfig()
    return PlantState(
        config=config,
        arm=ArmState(object_temp=config.init_temp),
        rng_seed=rng_seed,
        assets_on={asset: True for asset in config.asset_ids},
    )


def _quantize(t: float) -> float:
    return round(t, 10)


def _resolve_commands(
    state: PlantState,
    commands: Sequence[ActuatorCommand],
    faults: Sequence[FaultInjection],
) -> dict[str, float]:
    known = state.config.actuator_ids
    effective: dict[str, float] = {}
    for cmd in commands:
        if cmd.actuator_id not in known:
            raise UnknownActuator(cmd.actuator_id)
        if not math.isfinite(cmd.value):
            raise NonFiniteCommand(f"{cmd.actuator_id}={cmd.value!r}")
        effective[cmd.actuator_id] = float(cmd.value)
    # overrides win over operator commands for as long as they are active
    for fault in faults:
        if fault.kind is FaultKind.ACTUATOR_OVERRIDE and fault.active_at(state.tick):
            if fault.target not in known:
                raise UnknownActuator(fault.target)
            effective[fault.target] = fault.magnitude
    return effective


def _truthful_value(state: PlantState, sensor: SensorDef) -> float:
    cfg = state.config
    if sensor.sensor_type is SensorType.VELOCITY:
        return state.velocity
    if sensor.sensor_type is SensorType.OBJECT_DETECTION:
        lo, hi = cfg.detection_window
        present = any(
            lo <= obj.position <= hi and not obj.welded for obj in state.belt_objects
        )
        return 1.0 if present else 0.0
    if sensor.sensor_type is SensorType.CURRENT:
        return state.arm.current
    if sensor.sensor_type is SensorType.PRESSURE:
        return state.arm.pressure
    if sensor.sensor_type is SensorType.TEMPERATURE:
        lo, hi = cfg.station_b_window
        present = any(lo <= obj.position <= hi for obj in state.belt_objects)
        return state.arm.object_temp if present else cfg.init_temp
    raise UnknownSensor(sensor.sensor_id)


def _object_at_station_b(state: PlantState) -> ObjectOnBelt | None:
    lo, hi = state.config.station_b_window
    for obj in state.belt_objects:
        if lo <= obj.position <= hi and not obj.welded:
            return obj
    return None


def step(
    state: PlantState,
    commands: Sequence[ActuatorCommand] = (),
    faults: Sequence[FaultInjection] = (),
    dt: float | None = None,
) -> PlantState:
    """Advance the plant by one tick.

    Commands issued here take effect during the step, i.e. they shape the
    state observed at ``tick + 1``. Actuator overrides active at the
    current tick displace conflicting commands.
    """
    cfg = state.config
    dt = cfg.dt if dt is None else float(dt)
    if not (dt > 0):
        raise ValueError(f"dt must be positive, got {dt}")

    effective = _resolve_commands(state, commands, faults)

    assets_on = dict(state.assets_on)
    for actuator, value in effective.items():
        if actuator.startswith(POWER_PREFIX):
            assets_on[actuator[len(POWER_PREFIX):]] = bool(value)

    motor_on = state.motor_on
    if "motor" in effective:
        motor_on = bool(effective["motor"])
    velocity = state.velocity
    if "velocity" in effective:
        requested = effective["velocity"]
        if requested < 0:
            raise ValueError(f"velocity setpoint must be >= 0, got {requested}")
        velocity = requested
    if not motor_on:
        velocity = 0.0

    arm = state.arm
    current = effective.get("current", arm.current)
    pressure = effective.get("pressure", arm.pressure)
    if current < 0 or pressure < 0:
        raise ValueError("current/pressure setpoints must be >= 0")

    task_status = arm.task_status
    weld_started_at = arm.weld_started_at
    workpiece_id = arm.workpiece_id
    object_temp = arm.object_temp
    objects_welded = arm.objects_welded

    if "weld" in effective:
        if effective["weld"] and task_status is not TaskStatus.WELDING:
            target = _object_at_station_b(state)
            if target is not None:
                task_status = TaskStatus.WELDING
                weld_started_at = state.time
                workpiece_id = target.object_id
                object_temp = cfg.init_temp  # fresh chassis under the gun
        elif not effective["weld"] and task_status is TaskStatus.WELDING:
            # abort: no completion, workpiece stays unwelded
            task_status = TaskStatus.IDLE
            weld_started_at = None

    # belt kinematics: objects ride while the motor drives; anything pushed
    # past the end of the belt leaves the line
    objects = state.belt_objects
    if motor_on and velocity > 0:
        moved = tuple(
            replace(obj, position=_quantize(obj.position + velocity * dt))
            for obj in objects
        )
        objects = tuple(obj for obj in moved if obj.position <= cfg.belt_length)
    welded_now: int | None = None

    # thermal dynamics
    next_time = _quantize((state.tick + 1) * dt)
    if task_status is TaskStatus.WELDING:
        if workpiece_id is not None and all(
            obj.object_id != workpiece_id for obj in objects
        ):
            # workpiece left the belt mid-weld: abort
            task_status = TaskStatus.IDLE
            weld_started_at = None
        else:
            object_temp = object_temp + cfg.k_heat * current * pressure * dt
            assert weld_started_at is not None
            if next_time - weld_started_at >= cfg.weld_duration - 1e-9:
                task_status = TaskStatus.DONE
                weld_started_at = None
                welded_now = workpiece_id
                objects_welded += 1
    elif object_temp > cfg.init_temp:
        decayed = cfg.init_temp + (object_temp - cfg.init_temp) * math.exp(
            -cfg.k_cool * dt
        )
        object_temp = max(decayed, cfg.init_temp)

    if welded_now is not None:
        objects = tuple(
            replace(obj, welded=True) if obj.object_id == welded_now else obj
            for obj in objects
        )

    # latch values for SensorStuck faults that become active at the next tick
    next_tick = state.tick + 1
    stuck_values = dict(state.stuck_values)
    active_targets = set()
    for fault in faults:
        if fault.kind is FaultKind.SENSOR_STUCK and fault.active_at(next_tick):
            active_targets.add(fault.target)
            if fault.target not in stuck_values:
                stuck_values[fault.target] = _truthful_value(
                    state, cfg.sensor(fault.target)
                )
    for target in list(stuck_values):
        if target not in active_targets:
            del stuck_values[target]

    return replace(
        state,
        tick=next_tick,
        time=next_time,
        motor_on=motor_on,
        velocity=velocity,
        belt_objects=objects,
        arm=ArmState(
            current=current,
            pressure=pressure,
            object_temp=object_temp,
            task_status=task_status,
            weld_started_at=weld_started_at,
            objects_welded=objects_welded,
            workpiece_id=workpiece_id,
        ),
        assets_on=assets_on,
        stuck_values=stuck_values,
    )


def read_sensor(
    state: PlantState, sensor_id: str, faults: Sequence[FaultInjection] = ()
) -> SensorReading:
    """Sample one sensor, applying any active sensor faults.

    A stuck fault replaces the truthful value with the one latched at
    activation (the last pre-fault value; the activation-tick value when
    the fault is active from tick 0); offset faults then add on top.
    """
    sensor = state.config.sensor(sensor_id)
    value = _truthful_value(state, sensor)
    for fault in faults:
        if fault.target != sensor_id or not fault.active_at(state.tick):
            continue
        if fault.kind is FaultKind.SENSOR_STUCK:
            value = state.stuck_values.get(sensor_id, value)
    for fault in faults:
        if fault.target != sensor_id or not fault.active_at(state.tick):
            continue
        if fault.kind is FaultKind.SENSOR_OFFSET:
            value = value + fault.magnitude
    return SensorReading(
        sensor_id=sensor_id,
        sensor_type=sensor.sensor_type,
        value=value,
        timestamp=state.time,
        asset_id=sensor.asset_id,
    )


def read_all_sensors(
    state: PlantState, faults: Sequence[FaultInjection] = ()
) -> dict[str, float]:
    return {
        sensor.sensor_id: read_sensor(state, sensor.sensor_id, faults).value
        for sensor in state.config.sensors
    }


def load_object(state: PlantState) -> PlantState:
    """Load one chassis onto the belt at Station A (position 0)."""
    return place_object(state, 0.0)


def place_object(state: PlantState, position: float) -> PlantState:
    """Put a chassis on the belt at an arbitrary position.

    Used by the arm scenario and tests to stage workpieces; the spacing
    rule (at least one object length clear) applies at any position.
    """
    cfg = state.config
    if not (0 <= position <= cfg.belt_length):
        raise ValueError(f"position {position} outside belt [0, {cfg.belt_length}]")
    for obj in state.belt_objects:
        if abs(obj.position - position) < cfg.object_length:
            raise SlotOccupied(
                f"object {obj.object_id} at {obj.position} blocks position {position}"
            )
    new_id = state.objects_loaded + 1
    objects = tuple(
        sorted(
            state.belt_objects
            + (ObjectOnBelt(new_id, float(position), state.time),),
            key=lambda o: o.position,
        )
    )
    return replace(state, belt_objects=objects, objects_loaded=new_id)


def remove_object(state: PlantState, object_id: int) -> PlantState:
    """Take a chassis off the belt (it moves on to the next station)."""
    objects = tuple(o for o in state.belt_objects if o.object_id != object_id)
    if len(objects) == len(state.belt_objects):
        raise ValueError(f"no object {object_id} on the belt")
    return replace(state, belt_objects=objects)


# --- trace records ------------------------------------------------------
#
# One record per tick, newline-delimited JSON with a fixed field order:
# tick, time, motor_on, velocity, assets_on, objects, arm, sensors.
# This file format is both the replication-mode input and the golden-file
# format for determinism tests.

TRACE_FIELDS = ("tick", "time", "motor_on", "velocity", "assets_on", "objects", "arm", "sensors")


@dataclass(frozen=True)
class TraceRecord:
    tick: int
    time: float
    motor_on: bool
    velocity: float
    assets_on: dict[str, bool]
    objects: tuple[dict, ...]
    arm: dict
    sensors: dict[str, float]

    def to_obj(self) -> dict:
        return {
            "tick": self.tick,
            "time": self.time,
            "motor_on": self.motor_on,
            "velocity": self.velocity,
            "assets_on": dict(self.assets_on),
            "objects": list(self.objects),
            "arm": dict(self.arm),
            "sensors": dict(self.sensors),
        }

    def to_line(self) -> str:
        return json.dumps(self.to_obj(), allow_nan=False, separators=(",", ":"))

    @classmethod
    def from_obj(cls, obj: dict) -> "TraceRecord":
        try:
            return cls(
                tick=int(obj["tick"]),
                time=float(obj["time"]),
                motor_on=bool(obj["motor_on"]),
                velocity=float(obj["velocity"]),
                assets_on={str(k): bool(v) for k, v in obj["assets_on"].items()},
                objects=tuple(dict(o) for o in obj["objects"]),
                arm=dict(obj["arm"]),
                sensors={str(k): float(v) for k, v in obj["sensors"].items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceParse(f"bad trace record: {exc}") from exc


def record_from_state(
    state: PlantState, faults: Sequence[FaultInjection] = ()
) -> TraceRecord:
    return TraceRecord(
        tick=state.tick,
        time=state.time,
        motor_on=state.motor_on,
        velocity=state.velocity,
        assets_on=dict(state.assets_on),
        objects=tuple(
            {"id": o.object_id, "position": o.position, "welded": o.welded}
            for o in state.belt_objects
        ),
        arm={
            "current": state.arm.current,
            "pressure": state.arm.pressure,
            "object_temp": state.arm.object_temp,
            "task_status": int(state.arm.task_status),
            "weld_started_at": state.arm.weld_started_at,
            "objects_welded": state.arm.objects_welded,
        },
        sensors=read_all_sensors(state, faults),
    )


def write_trace(records: Iterable[TraceRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_line())
            fh.write("\n")


def trace_to_text(records: Iterable[TraceRecord]) -> str:
    return "".join(record.to_line() + "\n" for record in records)


def read_trace(path: str | Path) -> list[TraceRecord]:
    return parse_trace(Path(path).read_text(encoding="utf-8"))


def parse_trace(text: str) -> list[TraceRecord]:
    records: list[TraceRecord] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParse(f"line {lineno}: {exc}") from exc
        if not isinstance(obj, dict):
            raise TraceParse(f"line {lineno}: record is not an object")
        records.append(TraceRecord.from_obj(obj))
    return records
