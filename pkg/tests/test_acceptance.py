"""Acceptance suite: one test per criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v`` for one pass/fail line
per criterion; each test also prints an [ACCEPTANCE] line.
"""

import random
import time

import pytest
from click.testing import CliRunner

from twinsec.clock import LogicalClock
from twinsec.errors import ChainFormatError, Unauthorized
from twinsec.icm import CalibrationRecord, consistency_check
from twinsec.ledger import Entry, KeyRegistry, Ledger
from twinsec.plant import FaultInjection, FaultKind, SensorReading, SensorType
from twinsec.reference import REFERENCE_CALIBRATION, bootstrap_world, make_reference_trace
from twinsec.rules import Principal, Role, SensorInBounds
from twinsec.service.cli import main as cli_main
from twinsec.twin import (
    Action,
    Bounds,
    NO_MATCHING_RULE,
    SimInputs,
    TwinConfig,
    replicate,
    run_arm_sim,
    run_conveyor_sim,
)
from twinsec.verify import PropertyId, PropertySpec, bounded_explore, check_trace, replay

from oracles import expected_spacing, weld_breaches, weld_peak_temp, aborted_peak_temp

ANALYST = Principal("an1", frozenset({Role.SECURITY_ANALYST}))
OPERATOR = Principal("op1", frozenset({Role.PLANT_OPERATOR}))


def ok(name: str) -> None:
    print(f"[ACCEPTANCE] {name}: PASS")


def fresh_world(**kwargs):
    return bootstrap_world(clock=LogicalClock(), key_seed="acceptance", **kwargs)


def test_criterion_1_consistency_check_conformance():
    """Inclusive-bounds equivalence over >=10^4 random triples in <5s."""
    rng = random.Random(20240811)
    started = time.perf_counter()
    trials = 10_000
    mismatches = 0
    for i in range(trials):
        lo = rng.uniform(-1e6, 1e6)
        hi = lo + rng.uniform(0, 1e6)
        if i % 10 == 0:
            value = lo  # boundary equality, lower
        elif i % 10 == 1:
            value = hi  # boundary equality, upper
        else:
            value = rng.uniform(-2e6, 2e6)
        reading = SensorReading("s", SensorType.VELOCITY, value, 0.0, "a")
        cal = CalibrationRecord("s", lo, hi)
        expected = not (value < lo) and not (value > hi)
        if consistency_check(reading, cal) is not expected:
            mismatches += 1
    elapsed = time.perf_counter() - started
    assert mismatches == 0, f"{mismatches}/{trials} disagreements"
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    ok(f"Eq-style consistency check conformance ({trials} triples, {elapsed:.2f}s)")


def test_criterion_2_replication_fidelity():
    """500-tick fault-free trace -> 0 incidents; offset fault -> first
    incident within 1 tick of activation; deterministic over 10 runs."""
    clean_trace = make_reference_trace(ticks=500)
    fault = FaultInjection(FaultKind.SENSOR_OFFSET, "s5", 100.0, (200, 260))
    faulty_trace = make_reference_trace(ticks=500, faults=[fault])

    clean_signatures = set()
    faulty_signatures = set()
    for _ in range(10):
        world = fresh_world()
        clean = replicate(world.twin, clean_trace, list(REFERENCE_CALIBRATION))
        assert clean.incidents == (), "fault-free trace must replicate with zero incidents"
        faulty = replicate(world.twin, faulty_trace, list(REFERENCE_CALIBRATION))
        assert len(faulty.incidents) >= 1
        assert abs(faulty.incidents[0].tick - 200) <= 1
        clean_signatures.add(clean.to_canonical())
        faulty_signatures.add(faulty.to_canonical())
    assert len(clean_signatures) == 1 and len(faulty_signatures) == 1, "non-deterministic"
    ok("replication fidelity (0 incidents clean; first incident at fault tick; 10x deterministic)")


def test_criterion_3_algorithm4_branch_coverage():
    """Matched rule -> calibration service; no rule -> scheduling service."""
    fault = FaultInjection(FaultKind.SENSOR_OFFSET, "s5", 100.0, (100, 140))
    trace = make_reference_trace(ticks=300, faults=[fault])

    with_rule = fresh_world()
    matched_report = replicate(with_rule.twin, trace, list(REFERENCE_CALIBRATION))
    first = matched_report.incidents[0]
    assert first.action_taken is Action.CALIBRATION
    assert first.violated_rule != NO_MATCHING_RULE

    without_rule = fresh_world(calibration_rules=REFERENCE_CALIBRATION[:4])
    unmatched_report = replicate(without_rule.twin, trace, list(REFERENCE_CALIBRATION))
    first = unmatched_report.incidents[0]
    assert first.violated_rule == NO_MATCHING_RULE
    assert first.action_taken is Action.SCHEDULING
    ok("Algorithm-4 branch coverage (calibration vs scheduling service)")


def test_criterion_4_rule_lifecycle_and_tamper_detection():
    """RBAC denial leaves the chain unchanged; create/update -> versions
    [1,2] in chain order; 100 single-byte tampers all detected."""
    world = fresh_world()
    engine, ledger = world.engine, world.ledger

    before = len(ledger)
    with pytest.raises(Unauthorized):
        engine.upsert_rule(OPERATOR, SensorInBounds("s1", 0.0, 9.0), {"s1"})
    assert len(ledger) == before

    rule_id = engine.upsert_rule(ANALYST, SensorInBounds("s1", 0.0, 9.0), {"s1"})
    engine.upsert_rule(ANALYST, SensorInBounds("s1", 0.0, 8.0), {"s1"}, existing=rule_id)
    history = engine.get_rule_history(rule_id)
    assert [r.version for r in history] == [1, 2]

    assert ledger.verify_chain().intact

    # correct-index detection: flip one payload byte in each block in turn
    for index in range(len(ledger)):
        tampered = Ledger(keys=KeyRegistry("acceptance"))
        tampered.load_bytes(ledger.export_bytes())
        block = tampered.get_block(index)
        entry = block.entries[0]
        flipped = bytearray(entry.payload)
        flipped[0] ^= 0x01
        tampered._blocks[index] = block.__class__(
            index=block.index, prev_hash=block.prev_hash, timestamp=block.timestamp,
            entries=(Entry(entry.kind, bytes(flipped), entry.payload_digest),) + block.entries[1:],
            author=block.author, signature=block.signature, hash=block.hash,
        )
        status = tampered.verify_chain()
        assert not status.intact and status.broken_index == index

    # fuzz: 100 random single-byte mutations of the exported file
    blob = ledger.export_bytes()
    rng = random.Random(99)
    detected = 0
    for _ in range(100):
        position = rng.randrange(len(blob))
        mutated = bytearray(blob)
        mutated[position] ^= rng.randrange(1, 256)
        candidate = Ledger(keys=KeyRegistry("acceptance"))
        try:
            candidate.load_bytes(bytes(mutated))
        except ChainFormatError:
            detected += 1
            continue
        if not candidate.verify_chain().intact:
            detected += 1
    assert detected == 100, f"only {detected}/100 tampers detected"
    ok("Algorithm-1 lifecycle + tamper detection (versions [1,2]; 100/100 mutations)")


def test_criterion_5_capacity_health_event():
    """With capacity 5 the equipment-health event fires exactly once,
    before weld 6 and never earlier."""
    world = fresh_world()
    config = TwinConfig()  # a_max_capacity=5
    assert config.a_max_capacity == 5
    report = run_arm_sim(world.twin, config, SimInputs(current=5.0, pressure=50.0, weld_count=6))
    health = [e for e in report.events if e["kind"] == "equipment_health_check"]
    assert len(health) == 1
    starts = [e["tick"] for e in report.events if e["kind"] == "weld_started"]
    completions = [e["tick"] for e in report.events if e["kind"] == "weld_completed"]
    assert len(starts) == 6
    assert completions[4] <= health[0]["tick"] <= starts[5]
    assert health[0]["objects_welded"] == 5

    five = run_arm_sim(world.twin, config, SimInputs(current=5.0, pressure=50.0, weld_count=5))
    assert not [e for e in five.events if e["kind"] == "equipment_health_check"]
    ok("Algorithm-3 capacity (health event exactly once, before weld 6)")


def test_criterion_6_thermal_oracle_agreement():
    """20 (C,P) grid points: breach classification 20/20 against the
    closed form; simulated peak within one heating step of the oracle."""
    config = TwinConfig(tau_t=Bounds(20.0, 40.0))
    init_temp = 25.0
    currents = [1.0 + 9.0 * i / 4 for i in range(5)]
    pressures = [10.0 + 90.0 * j / 3 for j in range(4)]
    points = [(c, p) for c in currents for p in pressures]
    assert len(points) == 20

    agreements = 0
    for current, pressure in points:
        world = fresh_world()
        report = run_arm_sim(
            world.twin, config, SimInputs(current=current, pressure=pressure, weld_count=1)
        )
        sim_breach = any(
            "s5" in i.actor_ids or i.observed.get("context", {}).get("bounds") == [20.0, 40.0]
            for i in report.incidents
        )
        oracle_breach = weld_breaches(init_temp, config.k_heat, current, pressure, config.d, 40.0)
        if sim_breach == oracle_breach:
            agreements += 1
        step_quantum = config.k_heat * current * pressure * config.dt
        sim_peak = max(r.arm["object_temp"] for r in report.trace)
        if oracle_breach:
            expected_peak = aborted_peak_temp(
                init_temp, config.k_heat, current, pressure, config.dt, config.d, 40.0
            )
        else:
            expected_peak = weld_peak_temp(init_temp, config.k_heat, current, pressure, config.d)
        assert abs(sim_peak - expected_peak) <= step_quantum + 1e-9, (
            f"C={current}, P={pressure}: peak {sim_peak} vs oracle {expected_peak}"
        )
    assert agreements == 20, f"breach classification agreed only {agreements}/20"
    ok("thermal oracle agreement (20/20 classification; peaks within one step)")


def test_criterion_7_spacing():
    """Min pairwise spacing == V*d within one dt*V quantum, 10 random draws."""
    rng = random.Random(7)
    for trial in range(10):
        velocity = rng.uniform(1.0, 5.0)
        d = rng.uniform(1.0, min(4.0, 10.0 / velocity))
        config = TwinConfig(d=d, max_ticks=3 * int(round(d / 0.1)) + 40)
        stride = int(round(d / config.dt))
        world = fresh_world()
        report = run_conveyor_sim(
            world.twin,
            config,
            SimInputs(velocity=velocity, load_ticks=(0, stride, 2 * stride)),
        )
        assert report.o_count == 3, f"trial {trial}: expected 3 chassis counted"
        min_gap = None
        for record in report.trace:
            positions = sorted(o["position"] for o in record.objects)
            for a, b in zip(positions, positions[1:]):
                gap = b - a
                min_gap = gap if min_gap is None else min(min_gap, gap)
        assert min_gap is not None
        target = expected_spacing(velocity, d)
        assert abs(min_gap - target) <= velocity * config.dt + 1e-9, (
            f"trial {trial}: V={velocity:.3f} d={d:.3f} gap={min_gap:.3f} target={target:.3f}"
        )
    ok("spacing (min pairwise gap == V*d within one dt*V, 10 draws)")


def test_criterion_8_verification_verdicts():
    """Nominal k=50 -> unsat for P1-P3; heating sabotage -> P2 sat with a
    replaying counterexample; plant-side velocity widening -> P3 sat;
    default grid completes in <60s."""
    nominal = TwinConfig()
    started = time.perf_counter()
    for pid in (PropertyId.P1_TIME, PropertyId.P2_TEMPERATURE, PropertyId.P3_VELOCITY):
        verdict = bounded_explore(nominal, 50, PropertySpec.for_config(pid, nominal))
        assert verdict.result == "unsat", f"{pid.value} expected unsat"
    elapsed = time.perf_counter() - started

    sabotaged_heat = TwinConfig(k_heat=nominal.k_heat * 10)
    p2 = PropertySpec.for_config(PropertyId.P2_TEMPERATURE, nominal)
    verdict = bounded_explore(sabotaged_heat, 50, p2)
    assert verdict.result == "sat"
    records = replay(sabotaged_heat, verdict.counterexample.schedule, 50)
    confirmed = check_trace(records, p2, dt=sabotaged_heat.dt)
    assert confirmed.sat and confirmed.counterexample.tick == verdict.counterexample.tick

    widened_guard = TwinConfig(tau_v=Bounds(1.0, 9.0))
    p3 = PropertySpec.for_config(PropertyId.P3_VELOCITY, nominal)
    verdict = bounded_explore(widened_guard, 50, p3)
    assert verdict.result == "sat"
    assert verdict.counterexample.details["velocity"] > nominal.tau_v.hi

    assert elapsed < 60.0, f"nominal exploration took {elapsed:.1f}s"
    ok(f"verification verdicts (unsat x3 in {elapsed:.1f}s; both sabotages sat)")


def test_criterion_9_demo_determinism(tmp_path):
    """`demo` run twice with one seed produces byte-identical outputs."""
    runner = CliRunner()
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        result = runner.invoke(cli_main, ["demo", "--out", str(out), "--seed", "11"])
        assert result.exit_code == 0, result.output
    files_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*") if p.is_file())
    assert files_a == files_b and files_a
    different = [
        str(rel) for rel in files_a if (out_a / rel).read_bytes() != (out_b / rel).read_bytes()
    ]
    assert not different, f"files differ: {different}"
    ok(f"determinism ({len(files_a)} demo files byte-identical, incl. traces and reports)")
