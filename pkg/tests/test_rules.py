"""Predicate language, RBAC-gated lifecycle, ledger-before-return."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from twinsec.clock import LogicalClock
from twinsec.errors import MalformedPredicate, MissingSignal, Unauthorized, UnknownRule
from twinsec.icm import CalibrationRecord
from twinsec.ledger import EntryKind, KeyRegistry, Ledger
from twinsec.rules import (
    AlwaysPass,
    And,
    AssetStatusIs,
    CountAtMost,
    Not,
    Or,
    Principal,
    RateAtMost,
    Role,
    RoleRequired,
    Rule,
    RuleEngine,
    SensorInBounds,
    TelemetrySnapshot,
    evaluate,
    parse_predicate,
    validate_predicate,
)

from test_icm import two_device_ek

ANALYST = Principal("an1", frozenset({Role.SECURITY_ANALYST}))
OPERATOR = Principal("op1", frozenset({Role.PLANT_OPERATOR}))
SYSTEM = Principal("sys", frozenset({Role.SYSTEM}))


@pytest.fixture
def engine():
    ledger = Ledger(keys=KeyRegistry("test"), clock=LogicalClock())
    return RuleEngine(ledger, ek=two_device_ek(), clock=LogicalClock())


def snapshot(**values) -> TelemetrySnapshot:
    return TelemetrySnapshot(values=values, statuses={"PLC1": "on"}, counters={"o_count": 3})


class TestPredicates:
    def test_in_bounds_pass_and_violation(self):
        rule = Rule("R-1", SensorInBounds("temp", 20, 80), frozenset({"temp"}), "an1", 1, 0, 0)
        assert evaluate(rule, snapshot(temp=50.0)).passed
        verdict = evaluate(rule, snapshot(temp=85.0))
        assert verdict.violation
        assert verdict.failing_atoms[0]["observed"] == {"temp": 85.0}
        assert verdict.rule_id == "R-1" and verdict.version == 1

    def test_conjunction_names_the_failing_atom(self):
        pred = And(SensorInBounds("temp", 20, 80), AssetStatusIs("motor", "on"))
        rule = Rule("R-2", pred, frozenset({"temp", "motor"}), "an1", 1, 0, 0)
        snap = TelemetrySnapshot(values={"temp": 50.0}, statuses={"motor": "off"})
        verdict = evaluate(rule, snap)
        assert verdict.violation
        assert len(verdict.failing_atoms) == 1
        assert "(status motor on)" == verdict.failing_atoms[0]["atom"]

    def test_or_and_not(self):
        snap = TelemetrySnapshot(values={"a": 5.0, "b": 50.0})
        ok, _ = Or(SensorInBounds("a", 0, 1), SensorInBounds("b", 0, 100)).check(snap)
        assert ok
        ok, fails = Or(SensorInBounds("a", 0, 1), SensorInBounds("b", 0, 10)).check(snap)
        assert not ok and len(fails) == 2
        ok, _ = Not(SensorInBounds("a", 0, 1)).check(snap)
        assert ok

    def test_count_and_rate_atoms(self):
        snap = TelemetrySnapshot(counters={"o_count": 11}, series={"s5": [25.0, 25.5, 40.0]})
        ok, fails = CountAtMost("o_count", 10).check(snap)
        assert not ok and fails[0]["observed"] == {"o_count": 11}
        ok, _ = RateAtMost("s5", 20.0, 1).check(snap)
        assert ok
        ok, fails = RateAtMost("s5", 10.0, 1).check(snap)
        assert not ok and fails[0]["observed"]["s5"] == pytest.approx(14.5)
        # insufficient history: no claim, passes
        ok, _ = RateAtMost("s5", 0.1, 5).check(snap)
        assert ok

    def test_role_required_atom(self):
        snap = TelemetrySnapshot(actions=(("rules.upsert", frozenset({"SecurityAnalyst"})),))
        ok, _ = RoleRequired("rules.upsert", "SecurityAnalyst").check(snap)
        assert ok
        snap = TelemetrySnapshot(actions=(("rules.upsert", frozenset({"PlantOperator"})),))
        ok, fails = RoleRequired("rules.upsert", "SecurityAnalyst").check(snap)
        assert not ok

    def test_missing_signal(self):
        rule = Rule("R-1", SensorInBounds("ghost", 0, 1), frozenset({"ghost"}), "an1", 1, 0, 0)
        with pytest.raises(MissingSignal):
            evaluate(rule, snapshot(temp=1.0))

    def test_canonical_sorts_and_or_operands(self):
        a = And(SensorInBounds("s1", 1, 5), AssetStatusIs("PLC1", "on"))
        b = And(AssetStatusIs("PLC1", "on"), SensorInBounds("s1", 1, 5))
        assert a.canonical() == b.canonical()
        assert a.canonical() == "(and (in-bounds s1 1.0 5.0) (status PLC1 on))"

    def test_parse_roundtrip(self):
        texts = [
            "(pass)",
            "(in-bounds s1 1.0 5.0)",
            "(status PLC1 on)",
            "(count-at-most o_count 10)",
            "(rate-at-most s5 5.0 10)",
            "(role-required rules.upsert SecurityAnalyst)",
            "(and (in-bounds s1 1.0 5.0) (not (status PLC1 off)))",
            "(or (count-at-most o_count 10) (in-bounds s1 0.0 2.5))",
        ]
        for text in texts:
            assert parse_predicate(text).canonical() == text

    def test_parse_rejects_garbage(self):
        for bad in ["", "(unknown x)", "(in-bounds s1 1.0)", "(and)", "(not a b)", "(pass) junk"]:
            with pytest.raises(MalformedPredicate):
                parse_predicate(bad)

    def test_validation_rejects_bad_bounds_and_depth(self):
        with pytest.raises(MalformedPredicate):
            validate_predicate(SensorInBounds("s1", 5, 1))
        with pytest.raises(MalformedPredicate):
            validate_predicate(SensorInBounds("s1", float("inf"), 1))
        pred = SensorInBounds("s1", 0, 1)
        for _ in range(17):
            pred = Not(pred)
        with pytest.raises(MalformedPredicate):
            validate_predicate(pred)

    def test_validation_checks_ids_against_ek(self):
        ek = two_device_ek()
        validate_predicate(SensorInBounds("s1", 0, 1), ek)
        with pytest.raises(MalformedPredicate):
            validate_predicate(SensorInBounds("s9", 0, 1), ek)
        with pytest.raises(MalformedPredicate):
            validate_predicate(AssetStatusIs("PLC9", "on"), ek)


class TestLifecycle:
    def test_create_assigns_fresh_id_version_1(self, engine):
        rule_id = engine.upsert_rule(ANALYST, SensorInBounds("s1", 1, 5), {"s1"})
        assert rule_id == "R-1"
        rule = engine.get_rule(rule_id)
        assert rule.version == 1
        assert len(engine.ledger.query(kind=EntryKind.RULE)) == 1

    def test_update_increments_version_same_id(self, engine):
        rule_id = engine.upsert_rule(ANALYST, SensorInBounds("s1", 1, 5), {"s1"})
        same = engine.upsert_rule(ANALYST, SensorInBounds("s1", 0, 6), {"s1"}, existing=rule_id)
        assert same == rule_id
        assert engine.get_rule(rule_id).version == 2
        history = engine.get_rule_history(rule_id)
        assert [r.version for r in history] == [1, 2]

    def test_operator_upsert_unauthorized_no_ledger_growth(self, engine):
        before = len(engine.ledger)
        with pytest.raises(Unauthorized):
            engine.upsert_rule(OPERATOR, SensorInBounds("s1", 1, 5), {"s1"})
        assert len(engine.ledger) == before

    def test_unknown_rule(self, engine):
        with pytest.raises(UnknownRule):
            engine.upsert_rule(ANALYST, AlwaysPass(), {"s1"}, existing="R-404")

    def test_empty_association_rejected(self, engine):
        with pytest.raises(MalformedPredicate):
            engine.upsert_rule(ANALYST, SensorInBounds("s1", 1, 5), set())

    def test_association_must_be_known(self, engine):
        with pytest.raises(MalformedPredicate):
            engine.upsert_rule(ANALYST, SensorInBounds("s1", 1, 5), {"ghost"})

    def test_ledger_entry_digest_matches_rule_state(self, engine):
        rule_id = engine.upsert_rule(ANALYST, SensorInBounds("s1", 1, 5), {"s1"})
        rule = engine.get_rule(rule_id)
        (_, entry), = engine.ledger.query(kind=EntryKind.RULE, rule_id=rule_id)
        assert entry.payload == rule.to_canonical()
        assert json.loads(entry.payload)["description"] == "(in-bounds s1 1.0 5.0)"

    def test_deactivation_is_a_pass_version(self, engine):
        rule_id = engine.upsert_rule(ANALYST, SensorInBounds("s1", 1, 5), {"s1"})
        engine.upsert_rule(ANALYST, AlwaysPass(), {"s1"}, existing=rule_id)
        rule = engine.get_rule(rule_id)
        assert evaluate(rule, TelemetrySnapshot()).passed

    def test_rebuild_from_ledger(self, engine):
        rule_id = engine.upsert_rule(ANALYST, SensorInBounds("s1", 1, 5), {"s1"})
        engine.upsert_rule(ANALYST, SensorInBounds("s1", 0, 9), {"s1"}, existing=rule_id)
        rebuilt = RuleEngine(engine.ledger, ek=two_device_ek(), clock=LogicalClock())
        assert rebuilt.get_rule(rule_id).version == 2
        fresh = rebuilt.upsert_rule(ANALYST, AssetStatusIs("PLC1", "on"), {"PLC1"})
        assert fresh == "R-2"

    @given(
        roles=st.sets(st.sampled_from([Role.PLANT_OPERATOR, Role.AUDITOR]), min_size=1)
    )
    @settings(max_examples=20, deadline=None)
    def test_denial_completeness(self, roles):
        ledger = Ledger(keys=KeyRegistry("test"), clock=LogicalClock())
        engine = RuleEngine(ledger, ek=two_device_ek(), clock=LogicalClock())
        principal = Principal("p", frozenset(roles))
        before = engine.ledger.entry_count()
        with pytest.raises(Unauthorized):
            engine.upsert_rule(principal, SensorInBounds("s1", 1, 5), {"s1"})
        assert engine.ledger.entry_count() == before


class TestDeriveThresholdRules:
    CAL = [
        CalibrationRecord("s1", 0.0, 10.0),
        CalibrationRecord("s2", 0.0, 1.0),
        CalibrationRecord("s3", 0.0, 15.0),
        CalibrationRecord("s4", 0.0, 150.0),
        CalibrationRecord("s5", 15.0, 90.0),
    ]

    @pytest.fixture
    def five_sensor_engine(self):
        from twinsec.reference import reference_bundle

        ledger = Ledger(keys=KeyRegistry("test"), clock=LogicalClock())
        return RuleEngine(ledger, ek=reference_bundle().ek, clock=LogicalClock())

    def test_one_rule_per_record_bounds_equal(self, five_sensor_engine):
        ids = five_sensor_engine.derive_threshold_rules(self.CAL, ANALYST)
        assert len(ids) == 5
        for cal, rule_id in zip(self.CAL, ids):
            rule = five_sensor_engine.get_rule(rule_id)
            assert rule.association == frozenset({cal.sensor_id})
            pred = rule.description
            assert isinstance(pred, SensorInBounds)
            assert (pred.sensor_id, pred.lo, pred.hi) == (cal.sensor_id, cal.tau_min, cal.tau_max)

    def test_empty_calibration_list(self, five_sensor_engine):
        assert five_sensor_engine.derive_threshold_rules([], ANALYST) == []

    def test_rerun_is_idempotent(self, five_sensor_engine):
        first = five_sensor_engine.derive_threshold_rules(self.CAL, ANALYST)
        second = five_sensor_engine.derive_threshold_rules(self.CAL, ANALYST)
        assert first == second
        versions = [five_sensor_engine.get_rule(r).version for r in second]
        assert versions == [2, 2, 2, 2, 2]

    def test_unauthorized(self, five_sensor_engine):
        with pytest.raises(Unauthorized):
            five_sensor_engine.derive_threshold_rules(self.CAL, OPERATOR)


@given(
    temp=st.floats(allow_nan=False, allow_infinity=False),
    lo=st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
    span=st.floats(min_value=0, max_value=1e6, allow_nan=False),
    status=st.sampled_from(["on", "off"]),
)
@settings(max_examples=200, deadline=None)
def test_evaluation_totality(temp, lo, span, status):
    pred = And(
        SensorInBounds("t", lo, lo + span),
        Or(AssetStatusIs("m", "on"), Not(CountAtMost("c", 5))),
    )
    rule = Rule("R-1", pred, frozenset({"t", "m"}), "an1", 1, 0, 0)
    snap = TelemetrySnapshot(values={"t": temp}, statuses={"m": status}, counters={"c": 3})
    verdict = evaluate(rule, snap)
    assert verdict.passed in (True, False)
    expected = (lo <= temp <= lo + span) and (status == "on" or not (3 <= 5))
    assert verdict.passed is expected
