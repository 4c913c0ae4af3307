"""Trace property checks and exhaustive bounded exploration."""

import time

import pytest

from twinsec.clock import LogicalClock
from twinsec.errors import BudgetExceeded, MissingSignal
from twinsec.reference import bootstrap_world, make_reference_trace
from twinsec.twin import Bounds, SimInputs, TwinConfig, run_arm_sim
from twinsec.verify import (
    Counterexample,
    InputDomains,
    PropertyId,
    PropertySpec,
    Verdict,
    bounded_explore,
    check_trace,
    enumerate_schedules,
    replay,
)

from oracles import ticks_to_breach

NOMINAL = TwinConfig()
P1 = PropertySpec.for_config(PropertyId.P1_TIME, NOMINAL)
P2 = PropertySpec.for_config(PropertyId.P2_TEMPERATURE, NOMINAL)
P3 = PropertySpec.for_config(PropertyId.P3_VELOCITY, NOMINAL)


def arm_trace(config=None, current=5.0, pressure=50.0, welds=1):
    world = bootstrap_world(clock=LogicalClock(), key_seed="verify-tests")
    report = run_arm_sim(
        world.twin, config or NOMINAL, SimInputs(current=current, pressure=pressure, weld_count=welds)
    )
    return report.trace


class TestCheckTrace:
    def test_nominal_traces_unsat_for_all_three(self):
        conveyor = make_reference_trace(ticks=200)
        arm = arm_trace()
        for prop in (P1, P2, P3):
            assert check_trace(conveyor, prop).result == "unsat"
            assert check_trace(arm, prop, dt=NOMINAL.dt).result == "unsat"

    def test_long_weld_trips_p1(self):
        # weld ran 2 ticks past the configured duration
        trace = arm_trace()
        prop = PropertySpec(PropertyId.P1_TIME, d=NOMINAL.d - 2.5 * NOMINAL.dt)
        verdict = check_trace(trace, prop, dt=NOMINAL.dt)
        assert verdict.sat
        assert verdict.counterexample.details["expected"] == prop.d

    def test_aborted_weld_trips_p1(self):
        config = TwinConfig(tau_t=Bounds(20.0, 40.0))
        trace = arm_trace(config=config, current=8.0, pressure=80.0)
        verdict = check_trace(trace, P1, dt=config.dt)
        assert verdict.sat
        assert verdict.counterexample.details["duration"] < NOMINAL.d

    def test_thermal_breach_trips_p2_at_oracle_tick(self):
        config = TwinConfig(tau_t=Bounds(20.0, 40.0))
        trace = arm_trace(config=config, current=8.0, pressure=80.0)
        verdict = check_trace(trace, PropertySpec(PropertyId.P2_TEMPERATURE, tau=config.tau_t), dt=config.dt)
        assert verdict.sat
        welding_start = next(
            r.tick for r in trace if r.arm["task_status"] == 2
        )
        oracle = welding_start - 1 + ticks_to_breach(25.0, config.k_heat, 8.0, 80.0, config.dt, 40.0)
        assert abs(verdict.counterexample.tick - oracle) <= 1

    def test_velocity_out_of_bounds_trips_p3(self):
        trace = make_reference_trace(ticks=50, velocity=7.0)
        verdict = check_trace(trace, P3)
        assert verdict.sat
        assert verdict.counterexample.details["velocity"] == 7.0
        assert verdict.counterexample.tick == trace[0].tick

    def test_incomplete_weld_is_not_a_p1_violation(self):
        config = TwinConfig(tau_t=Bounds(20.0, 40.0))
        trace = arm_trace(config=config, current=8.0, pressure=80.0)
        welding = [r for r in trace if r.arm["task_status"] == 2]
        cut = [r for r in trace if r.tick <= welding[0].tick + 1]
        assert check_trace(cut, P1, dt=config.dt).result == "unsat"

    def test_missing_signal(self):
        with pytest.raises(MissingSignal):
            check_trace([], P1)

    def test_verdict_shape_invariant(self):
        with pytest.raises(ValueError):
            Verdict(result="sat", prop=P1, explored_states=1, bound_k=1, counterexample=None)
        with pytest.raises(ValueError):
            Verdict(
                result="unsat", prop=P1, explored_states=1, bound_k=1,
                counterexample=Counterexample(0, {}),
            )


class TestBoundedExplore:
    def test_nominal_unsat_for_all_three_properties(self):
        for prop in (P1, P2, P3):
            verdict = bounded_explore(NOMINAL, k=50, prop=prop)
            assert verdict.result == "unsat"
            assert verdict.explored_states > 0
            assert verdict.bound_k == 50

    def test_heating_sabotage_makes_p2_sat_with_replayable_counterexample(self):
        sabotaged = TwinConfig(k_heat=NOMINAL.k_heat * 10)
        verdict = bounded_explore(sabotaged, k=50, prop=P2)
        assert verdict.sat
        ce = verdict.counterexample
        assert ce.schedule is not None
        records = replay(sabotaged, ce.schedule, k=50)
        confirm = check_trace(records, P2, dt=sabotaged.dt)
        assert confirm.sat
        assert confirm.counterexample.tick == ce.tick

    def test_velocity_guard_sabotage_makes_p3_sat(self):
        # the plant-side guard is widened; the property keeps nominal bounds
        sabotaged = TwinConfig(tau_v=Bounds(1.0, 9.0))
        verdict = bounded_explore(sabotaged, k=50, prop=P3)
        assert verdict.sat
        assert verdict.counterexample.details["velocity"] > NOMINAL.tau_v.hi

    def test_initial_state_alone_is_unsat(self):
        domains = InputDomains(
            velocities=(0.0,), currents=(0.0,), pressures=(0.0,), explore_loads=False
        )
        # velocity 0 is rejected by the tau_v guard, so nothing ever moves
        for prop in (P1, P2, P3):
            verdict = bounded_explore(NOMINAL, k=1, prop=prop, domains=domains)
            assert verdict.result == "unsat"

    def test_budget_exceeded_is_reported_not_truncated(self):
        with pytest.raises(BudgetExceeded):
            bounded_explore(NOMINAL, k=50, prop=P2, state_budget=100)

    def test_agreement_with_per_path_trace_checks(self):
        # tiny grid cross-check: explorer verdict == OR of per-path checks
        config = TwinConfig(k_heat=NOMINAL.k_heat * 10)
        domains = InputDomains(
            velocities=(2.0, 5.0), currents=(1.0, 10.0), pressures=(100.0,), explore_loads=True
        )
        k = 40
        schedules = enumerate_schedules(config, k, domains)
        brute = [check_trace(replay(config, s, k), P2, dt=config.dt).sat for s in schedules]
        verdict = bounded_explore(config, k, P2, domains=domains)
        assert verdict.sat == any(brute)
        if verdict.sat:
            first = next(i for i, hit in enumerate(brute) if hit)
            assert verdict.counterexample.schedule == schedules[first]

    def test_monotone_in_k(self):
        # unsat at a larger bound implies unsat at any smaller bound
        sabotaged = TwinConfig(k_heat=NOMINAL.k_heat * 10)
        big = bounded_explore(sabotaged, k=50, prop=P2)
        small = bounded_explore(sabotaged, k=20, prop=P2)
        if small.sat:
            assert big.sat
        nominal_big = bounded_explore(NOMINAL, k=50, prop=P2)
        nominal_small = bounded_explore(NOMINAL, k=25, prop=P2)
        assert nominal_big.result == "unsat"
        assert nominal_small.result == "unsat"

    def test_default_grid_completes_quickly(self):
        start = time.perf_counter()
        bounded_explore(NOMINAL, k=50, prop=P2)
        assert time.perf_counter() - start < 60.0
