"""The reference assembly-line scenario.

Two stations on a motor-driven belt: chassis load at Station A (proximity
detection), spot welding at Station B. Command and control runs through
PLC1/HMI1 (conveyor) and PLC2/HMI2 (arm); five instruments report the
process: s1 velocity, s2 object detection, s3 current, s4 pressure,
s5 temperature.

Everything here is plain data used by the demo, the tests, and twin
generation; production deployments would load their own spec files.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .clock import SystemClock
from .icm import (
    CalibrationRecord,
    DeviceSpec,
    DomainKnowledge,
    EngineeringKnowledge,
    HistoryEvent,
    ProcessSpec,
    SensorSpec,
    SpecBundle,
    TopologyLink,
)
from .ledger import EntryKind, KeyRegistry, Ledger
from .plant import (
    ActuatorCommand,
    FaultInjection,
    PlantConfig,
    TraceRecord,
    initial_state,
    load_object,
    record_from_state,
    step,
)
from .rules import RuleEngine
from .twin import SYSTEM_PRINCIPAL, TwinInstance, generate_twin

CONVEYOR_PLC = "PLC1"
CONVEYOR_HMI = "HMI1"
ARM_PLC = "PLC2"
ARM_HMI = "HMI2"

# sensor calibration: the validity range of each instrument as calibrated,
# wider than the operating thresholds a run is tuned to
REFERENCE_CALIBRATION: tuple[CalibrationRecord, ...] = (
    CalibrationRecord("s1", 0.0, 10.0, 0.0, "cal-std/velocity-v2"),
    CalibrationRecord("s2", 0.0, 1.0, 0.0, "cal-std/proximity-v1"),
    CalibrationRecord("s3", 0.0, 15.0, 0.0, "cal-std/current-v3"),
    CalibrationRecord("s4", 0.0, 150.0, 0.0, "cal-std/pressure-v1"),
    CalibrationRecord("s5", 15.0, 90.0, 0.0, "cal-std/thermal-v4"),
)


def reference_ek() -> EngineeringKnowledge:
    return EngineeringKnowledge(
        devices=(
            DeviceSpec(
                CONVEYOR_PLC,
                name="conveyor controller",
                device_type="plc",
                make="Acme",
                model="LX-240",
                standards=("IEC 61131-3",),
                config={
                    "logical_address": "10.0.0.11",
                    "channels": "ai1,ai2,do1",
                    "control_logic_id": "cl-conveyor-1",
                },
            ),
            DeviceSpec(
                CONVEYOR_HMI,
                name="conveyor operator panel",
                device_type="hmi",
                make="Acme",
                model="View-7",
                config={"logical_address": "10.0.0.21", "channels": "", "control_logic_id": ""},
            ),
            DeviceSpec(
                ARM_PLC,
                name="welding arm controller",
                device_type="plc",
                make="Acme",
                model="LX-240",
                standards=("IEC 61131-3",),
                config={
                    "logical_address": "10.0.0.12",
                    "channels": "ai3,ai4,ai5,do2",
                    "control_logic_id": "cl-arm-1",
                },
            ),
            DeviceSpec(
                ARM_HMI,
                name="welding operator panel",
                device_type="hmi",
                make="Acme",
                model="View-7",
                config={"logical_address": "10.0.0.22", "channels": "", "control_logic_id": ""},
            ),
        ),
        sensors=(
            SensorSpec("s1", "Velocity", CONVEYOR_PLC, "units/s"),
            SensorSpec("s2", "ObjectDetection", CONVEYOR_PLC, "bool"),
            SensorSpec("s3", "Current", ARM_PLC, "A"),
            SensorSpec("s4", "Pressure", ARM_PLC, "N"),
            SensorSpec("s5", "Temperature", ARM_PLC, "deg"),
        ),
        topology=(
            TopologyLink(CONVEYOR_HMI, CONVEYOR_PLC),
            TopologyLink(ARM_HMI, ARM_PLC),
            TopologyLink(CONVEYOR_PLC, ARM_PLC),
        ),
        processes=(
            ProcessSpec(
                "p-line-1",
                steps=(CONVEYOR_PLC, ARM_PLC),
                constraints=(
                    "chassis spacing >= velocity * inter-load delay",
                    "welding temperature within thermal bounds",
                ),
            ),
        ),
    )


def reference_dk() -> tuple[DomainKnowledge, ...]:
    return (
        DomainKnowledge(
            CONVEYOR_PLC,
            source="engineer",
            history=(
                HistoryEvent(0.0, "commissioned", {"logical_address": "10.0.0.11"}, "line bring-up"),
            ),
        ),
        DomainKnowledge(
            ARM_PLC,
            source="supply_chain",
            history=(
                HistoryEvent(0.0, "commissioned", {"logical_address": "10.0.0.12"}, "arm installed"),
                HistoryEvent(10.0, "electrode-replaced", {"logical_address": "10.0.0.12"}, "wear service"),
            ),
        ),
    )


def reference_bundle() -> SpecBundle:
    return SpecBundle(
        ek=reference_ek(),
        calibration=REFERENCE_CALIBRATION,
        domain_knowledge=reference_dk(),
    )


@dataclass
class World:
    """A bootstrapped platform instance around the reference scenario."""

    bundle: SpecBundle
    ledger: Ledger
    engine: RuleEngine
    twin: TwinInstance
    clock: Any


def bootstrap_world(
    clock: Any = None,
    key_seed: str = "twinsec-dev",
    calibration_rules: Sequence[CalibrationRecord] | None = None,
    plant_config: PlantConfig | None = None,
) -> World:
    """Stand up ledger + engine + twin for the reference scenario.

    Stores the spec snapshot on the chain, derives one threshold rule per
    calibration record (pass an explicit subset to leave rules out), and
    generates the twin with those bindings.
    """
    clock = clock or SystemClock()
    bundle = reference_bundle()
    ledger = Ledger(keys=KeyRegistry(key_seed), clock=clock)
    ledger.append([ledger.make_entry(EntryKind.SPEC, bundle.to_obj())], SYSTEM_PRINCIPAL)
    engine = RuleEngine(ledger, ek=bundle.ek, clock=clock)
    records = bundle.calibration if calibration_rules is None else tuple(calibration_rules)
    engine.derive_threshold_rules(records, SYSTEM_PRINCIPAL)
    twin = generate_twin(
        bundle.ek, bundle.domain_knowledge, ledger, engine=engine, clock=clock,
        plant_config=plant_config,
    )
    return World(bundle=bundle, ledger=ledger, engine=engine, twin=twin, clock=clock)


def make_reference_trace(
    ticks: int = 500,
    velocity: float = 2.0,
    load_every: int = 30,
    faults: Sequence[FaultInjection] = (),
    plant_config: PlantConfig | None = None,
    rng_seed: int = 0,
) -> list[TraceRecord]:
    """Record a running-line trace: motor on from the first record.

    Chassis are loaded whenever the tick is a multiple of ``load_every``
    and the loading slot is clear; sensor faults are applied to the
    recorded (sensor-visible) values.
    """
    cfg = plant_config or PlantConfig()
    state = initial_state(cfg, rng_seed=rng_seed)
    state = step(
        state,
        [ActuatorCommand("motor", 1), ActuatorCommand("velocity", velocity)],
        faults,
        dt=cfg.dt,
    )
    records: list[TraceRecord] = []
    for _ in range(ticks):
        if load_every and state.tick % load_every == 0:
            slot_blocked = any(o.position < cfg.object_length for o in state.belt_objects)
            if not slot_blocked:
                state = load_object(state)
        records.append(record_from_state(state, faults))
        state = step(state, [], faults, dt=cfg.dt)
    return records
