"""Safety & security rules: predicate language, RBAC gate, lifecycle.

A rule's description is a closed expression tree (no user code) over five
atom kinds, combined with and/or/not. Every predicate has a canonical
textual form -- prefix notation with sorted operands for and/or -- used
for digests, ledger storage, and the console rule editor.

Rule creation/update is RBAC-gated and persists a ledger entry before
returning, so the chain always holds the authoritative history; versions
start at 1 and increment by exactly 1 per update. Deactivation is
modeled as an update whose predicate is the constant ``(pass)``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .canonical import canonical_json, hexdigest_json
from .clock import SystemClock
from .errors import MalformedPredicate, MissingSignal, Unauthorized, UnknownRule
from .icm import EngineeringKnowledge, CalibrationRecord
from .ledger import EntryKind, Ledger

MAX_PREDICATE_DEPTH = 16


class Role(str, Enum):
    SECURITY_ANALYST = "SecurityAnalyst"
    PLANT_OPERATOR = "PlantOperator"
    AUDITOR = "Auditor"
    SYSTEM = "System"


RULE_WRITER_ROLES = frozenset({Role.SECURITY_ANALYST, Role.SYSTEM})


@dataclass(frozen=True)
class Principal:
    entity_id: str
    roles: frozenset[Role]

    def __post_init__(self) -> None:
        if not self.roles:
            raise ValueError("principal must hold at least one role")

    def has_any(self, roles: Iterable[Role]) -> bool:
        return bool(self.roles & set(roles))


# --- telemetry snapshot ---------------------------------------------------

@dataclass(frozen=True)
class TelemetrySnapshot:
    """Pure value object a predicate is evaluated against.

    values: sensor_id -> latest reading; statuses: asset_id -> "on"/"off";
    counters: logical counters such as o_count; series: recent reading
    history per sensor (oldest first) for rate atoms; actions: performed
    (action, actor-roles) pairs for access-constraint atoms.
    """

    values: Mapping[str, float] = field(default_factory=dict)
    statuses: Mapping[str, str] = field(default_factory=dict)
    counters: Mapping[str, int] = field(default_factory=dict)
    series: Mapping[str, Sequence[float]] = field(default_factory=dict)
    actions: Sequence[tuple[str, frozenset[str]]] = ()


# --- predicate language ------------------------------------------------------

def _fmt_num(x: float) -> str:
    return repr(float(x))


class Predicate:
    """Base class; subclasses implement canonical() and check()."""

    def canonical(self) -> str:
        raise NotImplementedError

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        """Return (ok, failing-atom records)."""
        raise NotImplementedError

    def referenced_sensor_ids(self) -> set[str]:
        return set()

    def referenced_asset_ids(self) -> set[str]:
        return set()

    def depth(self) -> int:
        return 1

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return self.canonical()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Predicate) and self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())


@dataclass(frozen=True, eq=False)
class AlwaysPass(Predicate):
    """Constant-true predicate; an update to this deactivates a rule."""

    def canonical(self) -> str:
        return "(pass)"

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        return True, []


@dataclass(frozen=True, eq=False)
class SensorInBounds(Predicate):
    sensor_id: str
    lo: float
    hi: float

    def canonical(self) -> str:
        return f"(in-bounds {self.sensor_id} {_fmt_num(self.lo)} {_fmt_num(self.hi)})"

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        if self.sensor_id not in snapshot.values:
            raise MissingSignal(self.sensor_id)
        value = snapshot.values[self.sensor_id]
        ok = self.lo <= value <= self.hi
        if ok:
            return True, []
        return False, [{"atom": self.canonical(), "observed": {self.sensor_id: value}}]

    def referenced_sensor_ids(self) -> set[str]:
        return {self.sensor_id}


@dataclass(frozen=True, eq=False)
class AssetStatusIs(Predicate):
    asset_id: str
    status: str  # "on" | "off"

    def canonical(self) -> str:
        return f"(status {self.asset_id} {self.status})"

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        if self.asset_id not in snapshot.statuses:
            raise MissingSignal(self.asset_id)
        observed = snapshot.statuses[self.asset_id]
        if observed == self.status:
            return True, []
        return False, [{"atom": self.canonical(), "observed": {self.asset_id: observed}}]

    def referenced_asset_ids(self) -> set[str]:
        return {self.asset_id}


@dataclass(frozen=True, eq=False)
class CountAtMost(Predicate):
    counter: str
    limit: int

    def canonical(self) -> str:
        return f"(count-at-most {self.counter} {int(self.limit)})"

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        if self.counter not in snapshot.counters:
            raise MissingSignal(self.counter)
        value = snapshot.counters[self.counter]
        if value <= self.limit:
            return True, []
        return False, [{"atom": self.canonical(), "observed": {self.counter: value}}]


@dataclass(frozen=True, eq=False)
class RateAtMost(Predicate):
    """|value(t) - value(t - window)| <= delta, over the snapshot series.

    Passes when fewer than window+1 samples exist (no rate claim yet).
    """

    sensor_id: str
    delta: float
    window: int

    def canonical(self) -> str:
        return f"(rate-at-most {self.sensor_id} {_fmt_num(self.delta)} {int(self.window)})"

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        if self.sensor_id not in snapshot.series:
            raise MissingSignal(self.sensor_id)
        series = snapshot.series[self.sensor_id]
        if len(series) < self.window + 1:
            return True, []
        change = abs(series[-1] - series[-1 - self.window])
        if change <= self.delta:
            return True, []
        return False, [
            {"atom": self.canonical(), "observed": {self.sensor_id: change}}
        ]

    def referenced_sensor_ids(self) -> set[str]:
        return {self.sensor_id}


@dataclass(frozen=True, eq=False)
class RoleRequired(Predicate):
    """Every occurrence of ``action`` in the snapshot was performed by ``role``."""

    action: str
    role: str

    def canonical(self) -> str:
        return f"(role-required {self.action} {self.role})"

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        for action, roles in snapshot.actions:
            if action == self.action and self.role not in roles:
                return False, [
                    {"atom": self.canonical(), "observed": {action: sorted(roles)}}
                ]
        return True, []


@dataclass(eq=False)
class And(Predicate):
    children: tuple[Predicate, ...]

    def __init__(self, *children: Predicate) -> None:
        self.children = tuple(children)

    def canonical(self) -> str:
        inner = " ".join(sorted(c.canonical() for c in self.children))
        return f"(and {inner})"

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        failing: list[dict] = []
        for child in self.children:
            ok, fails = child.check(snapshot)
            if not ok:
                failing.extend(fails)
        return (not failing), failing

    def referenced_sensor_ids(self) -> set[str]:
        return set().union(*(c.referenced_sensor_ids() for c in self.children)) if self.children else set()

    def referenced_asset_ids(self) -> set[str]:
        return set().union(*(c.referenced_asset_ids() for c in self.children)) if self.children else set()

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)


@dataclass(eq=False)
class Or(Predicate):
    children: tuple[Predicate, ...]

    def __init__(self, *children: Predicate) -> None:
        self.children = tuple(children)

    def canonical(self) -> str:
        inner = " ".join(sorted(c.canonical() for c in self.children))
        return f"(or {inner})"

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        failing: list[dict] = []
        for child in self.children:
            ok, fails = child.check(snapshot)
            if ok:
                return True, []
            failing.extend(fails)
        return False, failing

    def referenced_sensor_ids(self) -> set[str]:
        return set().union(*(c.referenced_sensor_ids() for c in self.children)) if self.children else set()

    def referenced_asset_ids(self) -> set[str]:
        return set().union(*(c.referenced_asset_ids() for c in self.children)) if self.children else set()

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)


@dataclass(eq=False)
class Not(Predicate):
    child: Predicate

    def __init__(self, child: Predicate) -> None:
        self.child = child

    def canonical(self) -> str:
        return f"(not {self.child.canonical()})"

    def check(self, snapshot: TelemetrySnapshot) -> tuple[bool, list[dict]]:
        ok, _ = self.child.check(snapshot)
        if not ok:
            return True, []
        return False, [{"atom": self.canonical(), "observed": {}}]

    def referenced_sensor_ids(self) -> set[str]:
        return self.child.referenced_sensor_ids()

    def referenced_asset_ids(self) -> set[str]:
        return self.child.referenced_asset_ids()

    def depth(self) -> int:
        return 1 + self.child.depth()


def validate_predicate(pred: Predicate, ek: EngineeringKnowledge | None = None) -> None:
    """Raise MalformedPredicate on any predicate-language invariant breach."""
    if pred.depth() > MAX_PREDICATE_DEPTH:
        raise MalformedPredicate(f"predicate depth {pred.depth()} exceeds {MAX_PREDICATE_DEPTH}")

    def walk(node: Predicate) -> None:
        if isinstance(node, SensorInBounds):
            if not (math.isfinite(node.lo) and math.isfinite(node.hi)):
                raise MalformedPredicate(f"non-finite bounds in {node.canonical()}")
            if node.lo > node.hi:
                raise MalformedPredicate(f"lo > hi in {node.canonical()}")
            if ek is not None and node.sensor_id not in ek.sensor_ids:
                raise MalformedPredicate(f"unknown sensor {node.sensor_id!r}")
        elif isinstance(node, RateAtMost):
            if not math.isfinite(node.delta) or node.delta < 0 or node.window < 1:
                raise MalformedPredicate(f"bad rate parameters in {node.canonical()}")
            if ek is not None and node.sensor_id not in ek.sensor_ids:
                raise MalformedPredicate(f"unknown sensor {node.sensor_id!r}")
        elif isinstance(node, AssetStatusIs):
            if node.status not in ("on", "off"):
                raise MalformedPredicate(f"status must be on/off in {node.canonical()}")
            if ek is not None and node.asset_id not in ek.asset_ids:
                raise MalformedPredicate(f"unknown asset {node.asset_id!r}")
        elif isinstance(node, CountAtMost):
            if node.limit < 0:
                raise MalformedPredicate(f"negative limit in {node.canonical()}")
        elif isinstance(node, (And, Or)):
            if not node.children:
                raise MalformedPredicate("and/or needs at least one operand")
            for child in node.children:
                walk(child)
        elif isinstance(node, Not):
            walk(node.child)
        elif isinstance(node, (RoleRequired, AlwaysPass)):
            pass
        else:
            raise MalformedPredicate(f"unknown predicate node {type(node).__name__}")

    walk(pred)


# --- canonical text parser --------------------------------------------------

def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_predicate(text: str) -> Predicate:
    """Parse the canonical prefix notation back into a predicate tree."""
    tokens = _tokenize(text)
    if not tokens:
        raise MalformedPredicate("empty predicate text")
    pred, rest = _parse_tokens(tokens)
    if rest:
        raise MalformedPredicate(f"trailing tokens: {' '.join(rest)}")
    return pred


def _parse_tokens(tokens: list[str]) -> tuple[Predicate, list[str]]:
    if tokens[0] != "(":
        raise MalformedPredicate(f"expected '(' near {tokens[0]!r}")
    if len(tokens) < 2:
        raise MalformedPredicate("unterminated expression")
    op = tokens[1]
    rest = tokens[2:]
    if op in ("and", "or", "not"):
        children: list[Predicate] = []
        while rest and rest[0] != ")":
            child, rest = _parse_tokens(rest)
            children.append(child)
        if not rest:
            raise MalformedPredicate("missing ')'")
        rest = rest[1:]
        if op == "not":
            if len(children) != 1:
                raise MalformedPredicate("not takes exactly one operand")
            return Not(children[0]), rest
        if not children:
            raise MalformedPredicate(f"{op} needs at least one operand")
        return (And(*children) if op == "and" else Or(*children)), rest

    args: list[str] = []
    while rest and rest[0] != ")":
        if rest[0] == "(":
            raise MalformedPredicate(f"unexpected '(' inside {op} atom")
        args.append(rest[0])
        rest = rest[1:]
    if not rest:
        raise MalformedPredicate("missing ')'")
    rest = rest[1:]
    try:
        if op == "pass" and not args:
            return AlwaysPass(), rest
        if op == "in-bounds" and len(args) == 3:
            return SensorInBounds(args[0], float(args[1]), float(args[2])), rest
        if op == "status" and len(args) == 2:
            return AssetStatusIs(args[0], args[1]), rest
        if op == "count-at-most" and len(args) == 2:
            return CountAtMost(args[0], int(args[1])), rest
        if op == "rate-at-most" and len(args) == 3:
            return RateAtMost(args[0], float(args[1]), int(args[2])), rest
        if op == "role-required" and len(args) == 2:
            return RoleRequired(args[0], args[1]), rest
    except ValueError as exc:
        raise MalformedPredicate(f"bad literal in {op} atom: {exc}") from exc
    raise MalformedPredicate(f"unknown atom {op!r} with {len(args)} argument(s)")


# --- rules and verdicts -------------------------------------------------------

@dataclass(frozen=True)
class Rule:
    rule_id: str
    description: Predicate
    association: frozenset[str]
    author: str
    version: int
    created_at: float
    updated_at: float

    def to_obj(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "version": self.version,
            "description": self.description.canonical(),
            "association": sorted(self.association),
            "author": self.author,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    def to_canonical(self) -> bytes:
        return canonical_json(self.to_obj())

    @classmethod
    def from_obj(cls, obj: dict) -> "Rule":
        return cls(
            rule_id=str(obj["rule_id"]),
            description=parse_predicate(str(obj["description"])),
            association=frozenset(obj["association"]),
            author=str(obj["author"]),
            version=int(obj["version"]),
            created_at=float(obj["created_at"]),
            updated_at=float(obj["updated_at"]),
        )


@dataclass(frozen=True)
class Verdict:
    passed: bool
    rule_id: str
    version: int
    failing_atoms: tuple[dict, ...] = ()

    @property
    def violation(self) -> bool:
        return not self.passed

    def to_obj(self) -> dict:
        return {
            "passed": self.passed,
            "rule_id": self.rule_id,
            "version": self.version,
            "failing_atoms": list(self.failing_atoms),
        }


def evaluate(rule: Rule, snapshot: TelemetrySnapshot) -> Verdict:
    """Evaluate purely; exactly one verdict for a complete snapshot."""
    ok, failing = rule.description.check(snapshot)
    return Verdict(
        passed=ok,
        rule_id=rule.rule_id,
        version=rule.version,
        failing_atoms=tuple(failing),
    )


class RuleEngine:
    """Rule lifecycle per the RBAC-gated create/update flow.

    Upserts are serialized behind one lock and always append a RuleEntry
    to the ledger before returning; the in-memory map is a cache of the
    latest versions and can be rebuilt from the chain.
    """

    def __init__(
        self,
        ledger: Ledger,
        ek: EngineeringKnowledge | None = None,
        clock: Any = None,
    ) -> None:
        self.ledger = ledger
        self.ek = ek
        self.clock = clock or SystemClock()
        self._rules: dict[str, Rule] = {}
        self._next_id = 1
        self._lock = threading.Lock()
        self._rebuild_from_ledger()

    def _rebuild_from_ledger(self) -> None:
        for _, entry in self.ledger.query(kind=EntryKind.RULE):
            rule = Rule.from_obj(entry.payload_obj())
            self._rules[rule.rule_id] = rule
            numeric = int(rule.rule_id.split("-", 1)[1]) if rule.rule_id.startswith("R-") else 0
            self._next_id = max(self._next_id, numeric + 1)

    # --- lifecycle ---------------------------------------------------------

    def upsert_rule(
        self,
        principal: Principal,
        description: Predicate,
        association: Iterable[str],
        existing: str | None = None,
    ) -> str:
        if not principal.has_any(RULE_WRITER_ROLES):
            raise Unauthorized(
                f"{principal.entity_id} lacks a rule-writer role "
                f"({', '.join(sorted(r.value for r in RULE_WRITER_ROLES))})"
            )
        association = frozenset(association)
        if not association:
            raise MalformedPredicate("rule association must be non-empty")
        validate_predicate(description, self.ek)
        if self.ek is not None:
            for any_id in association:
                if not self.ek.knows(any_id):
                    raise MalformedPredicate(f"association id {any_id!r} not in engineering knowledge")

        with self._lock:
            now = float(self.clock.now())
            if existing is None:
                rule_id = f"R-{self._next_id}"
                rule = Rule(
                    rule_id=rule_id,
                    description=description,
                    association=association,
                    author=principal.entity_id,
                    version=1,
                    created_at=now,
                    updated_at=now,
                )
            else:
                if existing not in self._rules:
                    raise UnknownRule(existing)
                old = self._rules[existing]
                rule = Rule(
                    rule_id=old.rule_id,
                    description=description,
                    association=association,
                    author=principal.entity_id,
                    version=old.version + 1,
                    created_at=old.created_at,
                    updated_at=now,
                )
            entry = self.ledger.make_entry(EntryKind.RULE, rule.to_obj())
            self.ledger.append([entry], principal)
            # chain write succeeded; only now expose the new state
            self._rules[rule.rule_id] = rule
            if existing is None:
                self._next_id += 1
            return rule.rule_id

    def get_rule(self, rule_id: str) -> Rule:
        if rule_id not in self._rules:
            raise UnknownRule(rule_id)
        return self._rules[rule_id]

    def all_rules(self) -> list[Rule]:
        return sorted(self._rules.values(), key=lambda r: r.rule_id)

    def get_rule_history(self, rule_id: str) -> list[Rule]:
        return [
            Rule.from_obj(entry.payload_obj())
            for _, entry in self.ledger.query(kind=EntryKind.RULE, rule_id=rule_id)
        ]

    def find_by_association(
        self, association: Iterable[str], atom: type[Predicate] | None = None
    ) -> Rule | None:
        """Latest rule with exactly this association (and atom type, if given)."""
        association = frozenset(association)
        for rule in self.all_rules():
            if rule.association != association:
                continue
            if atom is not None and not isinstance(rule.description, atom):
                continue
            return rule
        return None

    def derive_threshold_rules(
        self, calibration: Sequence[CalibrationRecord], author: Principal
    ) -> list[str]:
        """One in-bounds rule per calibration record; idempotent on rerun."""
        if not author.has_any(RULE_WRITER_ROLES):
            raise Unauthorized(f"{author.entity_id} lacks a rule-writer role")
        written: list[str] = []
        for cal in calibration:
            pred = SensorInBounds(cal.sensor_id, cal.tau_min, cal.tau_max)
            found = self.find_by_association({cal.sensor_id}, SensorInBounds)
            rule_id = self.upsert_rule(
                author, pred, {cal.sensor_id}, existing=found.rule_id if found else None
            )
            written.append(rule_id)
        return written

    def rule_digest(self, rule: Rule) -> str:
        return hexdigest_json(rule.to_obj())
