"""Bounded verification of the line model, without an external solver.

Three trace-level properties are checked:

* P1 (time): every completed weld task lasted the configured duration d,
  within one tick;
* P2 (temperature): the workpiece temperature stayed inside its thermal
  bounds throughout every welding phase;
* P3 (velocity): whenever the motor drove the belt, the velocity was
  inside its bounds.

``bounded_explore`` enumerates every execution path of length <= k over
a discretized input grid (5 setpoint values per bound interval,
load/skip per eligible tick) through the deterministic plant stepper and
reports sat with the lexicographically first violating path, or unsat
with the explored-state count. A sat verdict's counterexample is a
replayable input schedule.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

from .errors import BudgetExceeded, MissingSignal
from .plant import TaskStatus, TraceRecord
from .twin import Bounds, SimInputs, TwinConfig, _ScenarioDriver

DEFAULT_BOUND_K = 50
DEFAULT_STATE_BUDGET = 2_000_000
GRID_POINTS = 5


class PropertyId(str, Enum):
    P1_TIME = "P1_Time"
    P2_TEMPERATURE = "P2_Temperature"
    P3_VELOCITY = "P3_Velocity"


@dataclass(frozen=True)
class PropertySpec:
    id: PropertyId
    d: float | None = None
    tau: Bounds | None = None

    def __post_init__(self) -> None:
        if self.id is PropertyId.P1_TIME:
            if self.d is None or self.tau is not None:
                raise ValueError("P1 takes exactly parameter d")
        else:
            if self.tau is None or self.d is not None:
                raise ValueError(f"{self.id.value} takes exactly a bounds pair")

    @classmethod
    def for_config(cls, pid: PropertyId, config: TwinConfig) -> "PropertySpec":
        if pid is PropertyId.P1_TIME:
            return cls(pid, d=config.d)
        if pid is PropertyId.P2_TEMPERATURE:
            return cls(pid, tau=config.tau_t)
        return cls(pid, tau=config.tau_v)

    def to_obj(self) -> dict:
        obj: dict[str, Any] = {"id": self.id.value}
        if self.d is not None:
            obj["d"] = self.d
        if self.tau is not None:
            obj["tau"] = self.tau.to_obj()
        return obj


@dataclass(frozen=True)
class Counterexample:
    tick: int
    details: dict
    schedule: SimInputs | None = None  # present for explorer verdicts

    def to_obj(self) -> dict:
        obj = {"tick": self.tick, "details": self.details}
        if self.schedule is not None:
            obj["schedule"] = self.schedule.to_obj()
        return obj


@dataclass(frozen=True)
class Verdict:
    result: str  # "sat" | "unsat"
    prop: PropertySpec
    explored_states: int
    bound_k: int
    counterexample: Counterexample | None = None
    wall_seconds: float = 0.0

    def __post_init__(self) -> None:
        if (self.result == "sat") != (self.counterexample is not None):
            raise ValueError("sat verdicts carry a counterexample, unsat verdicts none")

    @property
    def sat(self) -> bool:
        return self.result == "sat"

    def to_obj(self) -> dict:
        # wall_seconds is reported separately (machine-specific, not part
        # of the exported verdict)
        return {
            "property": self.prop.to_obj(),
            "result": self.result,
            "bound_k": self.bound_k,
            "explored_states": self.explored_states,
            "counterexample": self.counterexample.to_obj() if self.counterexample else None,
        }


def _arm_field(record: TraceRecord, name: str):
    if name not in record.arm:
        raise MissingSignal(f"trace record {record.tick} lacks arm.{name}")
    return record.arm[name]


def check_trace(trace: Sequence[TraceRecord], prop: PropertySpec, dt: float | None = None) -> Verdict:
    """Check one recorded trace against a property.

    ``dt`` defaults to the tick spacing inferred from the trace; it is
    needed only for P1's duration arithmetic.
    """
    trace = list(trace)
    if not trace:
        raise MissingSignal("empty trace")
    if dt is None:
        dt = (trace[1].time - trace[0].time) if len(trace) > 1 else 0.1

    counterexample: Counterexample | None = None

    if prop.id is PropertyId.P1_TIME:
        assert prop.d is not None
        start: int | None = None
        for record in trace:
            status = int(_arm_field(record, "task_status"))
            if status == int(TaskStatus.WELDING):
                if start is None:
                    start = record.tick
            elif start is not None:
                duration = (record.tick - start) * dt
                if abs(duration - prop.d) > dt + 1e-9:
                    counterexample = Counterexample(
                        record.tick,
                        {"weld_started_tick": start, "duration": duration, "expected": prop.d},
                    )
                    break
                start = None
        # a weld still in progress at the end of the trace has no duration yet

    elif prop.id is PropertyId.P2_TEMPERATURE:
        assert prop.tau is not None
        for record in trace:
            if int(_arm_field(record, "task_status")) != int(TaskStatus.WELDING):
                continue
            temp = float(_arm_field(record, "object_temp"))
            if not prop.tau.contains(temp):
                counterexample = Counterexample(
                    record.tick, {"object_temp": temp, "tau": prop.tau.to_obj()}
                )
                break

    else:  # P3_VELOCITY
        assert prop.tau is not None
        for record in trace:
            if not record.motor_on:
                continue
            if not prop.tau.contains(record.velocity):
                counterexample = Counterexample(
                    record.tick, {"velocity": record.velocity, "tau": prop.tau.to_obj()}
                )
                break

    return Verdict(
        result="sat" if counterexample else "unsat",
        prop=prop,
        explored_states=len(trace),
        bound_k=len(trace),
        counterexample=counterexample,
    )


# --- bounded exploration --------------------------------------------------

@dataclass(frozen=True)
class InputDomains:
    """Discretized input grid; None fields default to a 5-point grid over
    the model's own bound intervals."""

    velocities: tuple[float, ...] | None = None
    currents: tuple[float, ...] | None = None
    pressures: tuple[float, ...] | None = None
    explore_loads: bool = True

    def resolved(self, config: TwinConfig, k: int) -> tuple[tuple, tuple, tuple, tuple]:
        velocities = self.velocities or _grid(config.tau_v)
        currents = self.currents or _grid(config.tau_c)
        pressures = self.pressures or _grid(config.tau_p)
        if self.explore_loads:
            stride = max(1, int(round(config.d / config.dt)))
            eligible = tuple(range(0, k, stride))
            load_choices = tuple(
                tuple(sorted(subset))
                for r in range(len(eligible) + 1)
                for subset in itertools.combinations(eligible, r)
            )
        else:
            load_choices = ((),)
        return velocities, currents, pressures, tuple(sorted(load_choices))


def _grid(bounds: Bounds, points: int = GRID_POINTS) -> tuple[float, ...]:
    if points == 1 or bounds.hi == bounds.lo:
        return (bounds.lo,)
    span = bounds.hi - bounds.lo
    return tuple(bounds.lo + span * i / (points - 1) for i in range(points))


def enumerate_schedules(
    config: TwinConfig, k: int, domains: InputDomains | None = None
) -> list[SimInputs]:
    """All input schedules of the discretized grid, in lexicographic order."""
    domains = domains or InputDomains()
    velocities, currents, pressures, load_choices = domains.resolved(config, k)
    schedules = []
    for v, c, p, loads in itertools.product(
        sorted(velocities), sorted(currents), sorted(pressures), load_choices
    ):
        schedules.append(
            SimInputs(velocity=v, current=c, pressure=p, load_ticks=loads, auto_weld=True)
        )
    return schedules


def replay(config: TwinConfig, schedule: SimInputs, k: int) -> list[TraceRecord]:
    """Re-run one input schedule through the plant stepper (no persistence)."""
    driver = _ScenarioDriver(config, schedule, twin=None, ticks=k, persist=False)
    return driver.run().records


def bounded_explore(
    config: TwinConfig,
    k: int,
    prop: PropertySpec,
    domains: InputDomains | None = None,
    state_budget: int = DEFAULT_STATE_BUDGET,
) -> Verdict:
    """Exhaustively explore all length-<=k paths on the input grid.

    Returns sat with the lexicographically first violating path, else
    unsat with the explored-state count; the result does not depend on
    enumeration order because the first violation in sorted order wins.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    started = time.perf_counter()
    schedules = enumerate_schedules(config, k, domains)
    projected = len(schedules) * k
    if projected > state_budget:
        raise BudgetExceeded(
            f"{len(schedules)} paths x {k} ticks = {projected} states exceeds budget {state_budget}"
        )
    explored = 0
    for schedule in schedules:
        records = replay(config, schedule, k)
        explored += len(records)
        verdict = check_trace(records, prop, dt=config.dt)
        if verdict.sat:
            assert verdict.counterexample is not None
            return Verdict(
                result="sat",
                prop=prop,
                explored_states=explored,
                bound_k=k,
                counterexample=Counterexample(
                    verdict.counterexample.tick,
                    verdict.counterexample.details,
                    schedule=schedule,
                ),
                wall_seconds=time.perf_counter() - started,
            )
    return Verdict(
        result="unsat",
        prop=prop,
        explored_states=explored,
        bound_k=k,
        wall_seconds=time.perf_counter() - started,
    )
