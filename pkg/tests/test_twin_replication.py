"""Replication mode: trace replay, consistency checks, service routing."""

import pytest

from twinsec.clock import LogicalClock
from twinsec.errors import CalibrationGap
from twinsec.plant import FaultInjection, FaultKind
from twinsec.reference import REFERENCE_CALIBRATION, bootstrap_world, make_reference_trace
from twinsec.rules import evaluate
from twinsec.twin import (
    Action,
    NO_MATCHING_RULE,
    Outcome,
    RunMode,
    Severity,
    replicate,
    snapshot_from_observed,
    tune_and_rerun,
    TwinConfig,
)

CAL = list(REFERENCE_CALIBRATION)


def fresh_world(**kwargs):
    return bootstrap_world(clock=LogicalClock(), key_seed="replication-tests", **kwargs)


def offset_fault(sensor="s5", magnitude=100.0, window=(200, 260)):
    return FaultInjection(FaultKind.SENSOR_OFFSET, sensor, magnitude, window)


def test_fault_free_trace_yields_zero_incidents():
    world = fresh_world()
    trace = make_reference_trace(ticks=500)
    report = replicate(world.twin, trace, CAL)
    assert report.mode is RunMode.REPLICATION
    assert report.incidents == ()
    assert report.outcome is Outcome.OPTIMAL
    assert report.o_count > 0  # chassis were counted along the way


def test_offset_fault_detected_within_one_tick():
    world = fresh_world()
    trace = make_reference_trace(ticks=500, faults=[offset_fault()])
    report = replicate(world.twin, trace, CAL)
    assert report.outcome is Outcome.INCIDENT
    first = report.incidents[0]
    assert abs(first.tick - 200) <= 1
    assert "s5" in first.actor_ids
    assert first.observed["context"]["reading"] == pytest.approx(125.0)


def test_matched_rule_routes_to_calibration_service():
    world = fresh_world()
    trace = make_reference_trace(ticks=300, faults=[offset_fault(window=(100, 150))])
    report = replicate(world.twin, trace, CAL)
    first = report.incidents[0]
    assert first.action_taken is Action.CALIBRATION
    assert first.severity is Severity.WARNING
    assert first.violated_rule != NO_MATCHING_RULE
    rule_id, version = first.rule_ref()
    rule = next(r for r in world.engine.get_rule_history(rule_id) if r.version == version)
    assert evaluate(rule, snapshot_from_observed(first.observed)).violation
    # nearest in-bounds setting proposed by the calibration service
    assert first.observed["context"]["proposed_setting"] == pytest.approx(90.0)
    assert any(
        e["kind"] == "service_call" and e["service"] == "calibration" for e in report.events
    )


def test_without_rule_routes_to_scheduling_service():
    # leave the temperature rule off the ledger: only s1..s4 rules derived
    world = fresh_world(calibration_rules=CAL[:4])
    assert len(world.twin.bound_rules) == 4
    trace = make_reference_trace(ticks=300, faults=[offset_fault(window=(100, 150))])
    report = replicate(world.twin, trace, CAL)
    first = report.incidents[0]
    assert first.violated_rule == NO_MATCHING_RULE
    assert first.action_taken is Action.SCHEDULING
    assert first.severity is Severity.CRITICAL
    # scheduling flags the sensor and suppresses duplicates
    s5_incidents = [i for i in report.incidents if "s5" in i.actor_ids]
    assert len(s5_incidents) == 1
    assert any(
        e["kind"] == "service_call" and e["service"] == "scheduling" for e in report.events
    )


def test_failure_path_upserts_a_rule():
    world = fresh_world(calibration_rules=CAL[:4])
    trace = make_reference_trace(ticks=300, faults=[offset_fault(window=(100, 150))])
    report = replicate(world.twin, trace, CAL)
    assert len(report.rules_written) == 1
    rule = world.engine.get_rule(report.rules_written[0])
    assert rule.association == frozenset({"s5"})


def test_replication_is_deterministic_across_repeats():
    world = fresh_world()
    trace = make_reference_trace(ticks=400, faults=[offset_fault()])
    baseline = None
    for _ in range(5):
        world_n = fresh_world()
        report = replicate(world_n.twin, trace, CAL)
        ticks = [(i.tick, i.violated_rule, i.action_taken.value) for i in report.incidents]
        if baseline is None:
            baseline = ticks
        assert ticks == baseline


def test_calibration_gap():
    world = fresh_world()
    trace = make_reference_trace(ticks=10)
    with pytest.raises(CalibrationGap):
        replicate(world.twin, trace, CAL[:3])


def test_asset_off_in_trace_fails_cc():
    world = fresh_world()
    power_off = FaultInjection(FaultKind.ACTUATOR_OVERRIDE, "power:PLC2", 0.0, (50, 60))
    trace = make_reference_trace(ticks=100, faults=[power_off])
    assert trace[55].assets_on["PLC2"] is False
    report = replicate(world.twin, trace, CAL)
    assert report.outcome is Outcome.INCIDENT
    first = report.incidents[0]
    assert abs(first.tick - 50) <= 1
    assert first.observed["context"]["asset_status"] == "off"


def test_three_criticals_on_one_asset_trigger_shutdown():
    # PLC2 owns s3/s4/s5; with none of their rules bound, simultaneous
    # breaches yield three critical incidents inside the shutdown window
    world = fresh_world(calibration_rules=CAL[:2])
    faults = [
        FaultInjection(FaultKind.SENSOR_OFFSET, "s3", 100.0, (50, 80)),
        FaultInjection(FaultKind.SENSOR_OFFSET, "s4", 500.0, (50, 80)),
        FaultInjection(FaultKind.SENSOR_OFFSET, "s5", 100.0, (50, 80)),
    ]
    trace = make_reference_trace(ticks=150, faults=faults)
    report = replicate(world.twin, trace, CAL)
    plc2 = [i for i in report.incidents if i.actor_ids[0] == "PLC2"]
    assert len(plc2) == 3
    assert [i.severity for i in plc2] == [Severity.CRITICAL] * 3
    assert plc2[-1].action_taken is Action.SHUTDOWN
    assert any(
        e["kind"] == "service_call" and e["service"] == "shutdown" for e in report.events
    )
    # once the asset is switched off, its sensors raise nothing further
    assert all(abs(i.tick - 50) <= 1 for i in plc2)


def test_simulation_traces_replicate_cleanly():
    # a healthy twin-simulated line is itself replication-consistent
    from twinsec.twin import SimInputs, run_arm_sim, run_conveyor_sim

    world = fresh_world()
    conveyor = run_conveyor_sim(
        world.twin, TwinConfig(max_ticks=120), SimInputs(velocity=2.0, load_ticks=(0, 30))
    )
    arm = run_arm_sim(world.twin, TwinConfig(), SimInputs(current=5.0, pressure=50.0, weld_count=2))
    for report in (conveyor, arm):
        mirrored = replicate(world.twin, report.trace, CAL)
        assert mirrored.incidents == ()
        assert mirrored.outcome is Outcome.OPTIMAL


def test_tune_and_rerun_replication_lineage():
    world = fresh_world()
    trace = make_reference_trace(ticks=300, faults=[offset_fault(window=(100, 150))])
    report = replicate(world.twin, trace, CAL)
    assert report.outcome is Outcome.INCIDENT
    rerun = tune_and_rerun(world.twin, report, TwinConfig())
    assert rerun.parent_run_id == report.run_id
    assert [i.tick for i in rerun.incidents] == [i.tick for i in report.incidents]
