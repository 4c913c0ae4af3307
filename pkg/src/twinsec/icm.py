"""Integrity checking: engineering knowledge, calibration, provenance.

The engineering knowledge (EK) store describes the devices, sensors,
network topology, and processes of the line; calibration records give
each sensor its trusted bounds; the inclusive-bounds consistency check
decides whether a reading is inside them. Provenance records document
who/what/which/how for rules, configurations, calibrations, and asset
history, in one of four fixed tuple shapes, and are meant to be appended
to the ledger as built.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .canonical import canonical_json, hexdigest_json
from .errors import SensorMismatch, SpecFormatError, Unauthorized, UnknownReference

Scalar = str | int | float | bool


# --- engineering knowledge ----------------------------------------------

@dataclass(frozen=True)
class DeviceSpec:
    asset_id: str
    name: str
    device_type: str
    make: str = ""
    model: str = ""
    standards: tuple[str, ...] = ()
    # flat configuration map: logical address, channel list (comma-joined),
    # control-logic id, and any extra scalar settings
    config: dict[str, Scalar] = field(default_factory=dict)


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: str
    sensor_type: str
    asset_id: str
    units: str = ""


@dataclass(frozen=True)
class TopologyLink:
    src: str
    dst: str


@dataclass(frozen=True)
class ProcessSpec:
    process_id: str
    steps: tuple[str, ...]
    constraints: tuple[str, ...] = ()


@dataclass(frozen=True)
class EngineeringKnowledge:
    devices: tuple[DeviceSpec, ...] = ()
    sensors: tuple[SensorSpec, ...] = ()
    topology: tuple[TopologyLink, ...] = ()
    processes: tuple[ProcessSpec, ...] = ()

    def device(self, asset_id: str) -> DeviceSpec:
        for dev in self.devices:
            if dev.asset_id == asset_id:
                return dev
        raise UnknownReference(f"asset {asset_id!r} not in engineering knowledge")

    def sensor(self, sensor_id: str) -> SensorSpec:
        for sensor in self.sensors:
            if sensor.sensor_id == sensor_id:
                return sensor
        raise UnknownReference(f"sensor {sensor_id!r} not in engineering knowledge")

    @property
    def asset_ids(self) -> set[str]:
        return {d.asset_id for d in self.devices}

    @property
    def sensor_ids(self) -> set[str]:
        return {s.sensor_id for s in self.sensors}

    def knows(self, any_id: str) -> bool:
        return any_id in self.asset_ids or any_id in self.sensor_ids

    def to_obj(self) -> dict:
        return {
            "devices": [
                {
                    "asset_id": d.asset_id,
                    "name": d.name,
                    "type": d.device_type,
                    "make": d.make,
                    "model": d.model,
                    "standards": list(d.standards),
                    "config": dict(d.config),
                }
                for d in self.devices
            ],
            "sensors": [
                {
                    "sensor_id": s.sensor_id,
                    "sensor_type": s.sensor_type,
                    "asset_id": s.asset_id,
                    "units": s.units,
                }
                for s in self.sensors
            ],
            "topology": [{"src": l.src, "dst": l.dst} for l in self.topology],
            "processes": [
                {
                    "process_id": p.process_id,
                    "steps": list(p.steps),
                    "constraints": list(p.constraints),
                }
                for p in self.processes
            ],
        }


# --- validation -----------------------------------------------------------

DUP_ID = "DUP_ID"
DANGLING_LINK = "DANGLING_LINK"
ORPHAN_SENSOR = "ORPHAN_SENSOR"
DISCONNECTED = "DISCONNECTED"
UNKNOWN_STEP = "UNKNOWN_STEP"


@dataclass(frozen=True)
class Finding:
    code: str
    subject: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def codes(self) -> list[str]:
        return [f.code for f in self.findings]

    def to_obj(self) -> dict:
        return {
            "ok": self.ok,
            "findings": [
                {"code": f.code, "subject": f.subject, "message": f.message}
                for f in self.findings
            ],
        }


def validate_spec(ek: EngineeringKnowledge) -> ValidationReport:
    """Check the EK well-formedness invariants; empty report iff well-formed."""
    findings: list[Finding] = []

    seen: set[str] = set()
    for dev in ek.devices:
        if dev.asset_id in seen:
            findings.append(Finding(DUP_ID, dev.asset_id, f"duplicate id {dev.asset_id!r}"))
        seen.add(dev.asset_id)
    for sensor in ek.sensors:
        if sensor.sensor_id in seen:
            findings.append(
                Finding(DUP_ID, sensor.sensor_id, f"duplicate id {sensor.sensor_id!r}")
            )
        seen.add(sensor.sensor_id)

    assets = ek.asset_ids
    for sensor in ek.sensors:
        if sensor.asset_id not in assets:
            findings.append(
                Finding(
                    ORPHAN_SENSOR,
                    sensor.sensor_id,
                    f"sensor {sensor.sensor_id!r} owned by undeclared asset {sensor.asset_id!r}",
                )
            )

    for link in ek.topology:
        for endpoint in (link.src, link.dst):
            if endpoint not in assets and endpoint not in ek.sensor_ids:
                findings.append(
                    Finding(
                        DANGLING_LINK,
                        endpoint,
                        f"topology link {link.src}->{link.dst} references undeclared {endpoint!r}",
                    )
                )

    # connectivity over declared devices (undirected view of the links)
    if len(assets) > 1:
        adjacency: dict[str, set[str]] = {a: set() for a in assets}
        for link in ek.topology:
            if link.src in adjacency and link.dst in adjacency:
                adjacency[link.src].add(link.dst)
                adjacency[link.dst].add(link.src)
        start = sorted(assets)[0]
        reached = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for neighbor in adjacency[node]:
                if neighbor not in reached:
                    reached.add(neighbor)
                    frontier.append(neighbor)
        for asset in sorted(assets - reached):
            findings.append(
                Finding(DISCONNECTED, asset, f"device {asset!r} unreachable in topology")
            )

    for process in ek.processes:
        for step_id in process.steps:
            if step_id not in assets:
                findings.append(
                    Finding(
                        UNKNOWN_STEP,
                        step_id,
                        f"process {process.process_id!r} step references undeclared asset {step_id!r}",
                    )
                )

    return ValidationReport(tuple(findings))


# --- calibration and consistency check -------------------------------------

@dataclass(frozen=True)
class CalibrationRecord:
    sensor_id: str
    tau_min: float
    tau_max: float
    calibrated_at: float = 0.0
    standard_ref: str = ""

    def __post_init__(self) -> None:
        if not (math.isfinite(self.tau_min) and math.isfinite(self.tau_max)):
            raise ValueError("calibration bounds must be finite")
        if self.tau_min > self.tau_max:
            raise ValueError(
                f"tau_min {self.tau_min} > tau_max {self.tau_max} for {self.sensor_id}"
            )

    def to_obj(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "calibrated_at": self.calibrated_at,
            "standard_ref": self.standard_ref,
        }


def consistency_check(reading, cal: CalibrationRecord) -> bool:
    """Inclusive-bounds check: tau_min <= value <= tau_max.

    ``reading`` is any object with ``sensor_id`` and ``value`` attributes
    (a plant SensorReading in practice).
    """
    if reading.sensor_id != cal.sensor_id:
        raise SensorMismatch(
            f"reading from {reading.sensor_id!r} checked against {cal.sensor_id!r}"
        )
    return cal.tau_min <= reading.value <= cal.tau_max


# --- domain knowledge ------------------------------------------------------

@dataclass(frozen=True)
class HistoryEvent:
    timestamp: float
    status: str
    config: dict[str, Scalar] = field(default_factory=dict)
    note: str = ""


@dataclass(frozen=True)
class DomainKnowledge:
    asset_id: str
    source: str  # engineer | supply_chain | soc
    history: tuple[HistoryEvent, ...] = ()

    def __post_init__(self) -> None:
        stamps = [e.timestamp for e in self.history]
        if any(b < a for a, b in zip(stamps, stamps[1:])):
            raise ValueError(f"history timestamps must be non-decreasing for {self.asset_id}")

    def to_obj(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "source": self.source,
            "history": [
                {
                    "timestamp": e.timestamp,
                    "status": e.status,
                    "config": dict(e.config),
                    "note": e.note,
                }
                for e in self.history
            ],
        }


# --- provenance --------------------------------------------------------------

class ProvenanceKind(str, Enum):
    PROCESS = "Process"
    EK = "EK"
    CV = "CV"
    DK = "DK"


# exact payload field set per kind; construction rejects anything else
PROVENANCE_FIELDS: dict[ProvenanceKind, tuple[str, ...]] = {
    ProvenanceKind.PROCESS: (
        "rule_id",
        "rule_digest",
        "entity_id",
        "asset_ids",
        "sensor_ids",
        "settings_digest",
    ),
    ProvenanceKind.EK: ("asset_id", "sensor_id", "config"),
    ProvenanceKind.CV: ("asset_id", "asset_status", "sensor_id", "reading_digest", "tau"),
    ProvenanceKind.DK: ("asset_id", "history_digest", "config"),
}


@dataclass(frozen=True)
class ProvenanceRecord:
    kind: ProvenanceKind
    payload: dict[str, Any]
    created_at: float
    author: str

    def __post_init__(self) -> None:
        expected = PROVENANCE_FIELDS[self.kind]
        got = tuple(sorted(self.payload))
        if got != tuple(sorted(expected)):
            raise ValueError(
                f"{self.kind.value} provenance payload must have fields {sorted(expected)}, got {sorted(got)}"
            )

    def to_obj(self) -> dict:
        return {
            "kind": self.kind.value,
            "payload": self.payload,
            "created_at": self.created_at,
            "author": self.author,
        }

    def to_canonical(self) -> bytes:
        return canonical_json(self.to_obj())

    @classmethod
    def from_obj(cls, obj: dict) -> "ProvenanceRecord":
        return cls(
            kind=ProvenanceKind(obj["kind"]),
            payload=dict(obj["payload"]),
            created_at=float(obj["created_at"]),
            author=str(obj["author"]),
        )


def _require_known(ek: EngineeringKnowledge, any_id: str) -> None:
    if not ek.knows(any_id):
        raise UnknownReference(f"id {any_id!r} not in engineering knowledge")


# same writer set the rules module uses; duck-typed (entity_id + roles) so
# this module stays import-free of the rules layer
PROVENANCE_WRITER_ROLES = frozenset({"SecurityAnalyst", "System"})


def _require_provenance_writer(author) -> str:
    roles = {getattr(r, "value", r) for r in getattr(author, "roles", ())}
    if not roles & PROVENANCE_WRITER_ROLES:
        raise Unauthorized(
            f"{getattr(author, 'entity_id', author)} (roles {sorted(roles)}) may not write provenance"
        )
    return author.entity_id


def build_ek_provenance(
    ek: EngineeringKnowledge, asset_id: str, sensor_id: str, author, created_at: float
) -> ProvenanceRecord:
    """What configuration settings are defined for this sensor on this asset."""
    entity_id = _require_provenance_writer(author)
    device = ek.device(asset_id)
    sensor = ek.sensor(sensor_id)
    if sensor.asset_id != asset_id:
        raise UnknownReference(f"sensor {sensor_id!r} is not affixed to {asset_id!r}")
    return ProvenanceRecord(
        kind=ProvenanceKind.EK,
        payload={"asset_id": asset_id, "sensor_id": sensor_id, "config": dict(device.config)},
        created_at=created_at,
        author=entity_id,
    )


def build_cv_provenance(
    ek: EngineeringKnowledge,
    asset_id: str,
    asset_status: str,
    reading,
    cal: CalibrationRecord,
    author,
    created_at: float,
) -> ProvenanceRecord:
    """Which threshold settings are in force, given the asset status and a reading."""
    entity_id = _require_provenance_writer(author)
    _require_known(ek, asset_id)
    ek.sensor(cal.sensor_id)
    if reading.sensor_id != cal.sensor_id:
        raise SensorMismatch(
            f"reading from {reading.sensor_id!r} paired with calibration {cal.sensor_id!r}"
        )
    reading_digest = hexdigest_json(
        {"sensor_id": reading.sensor_id, "value": reading.value, "timestamp": reading.timestamp}
    )
    return ProvenanceRecord(
        kind=ProvenanceKind.CV,
        payload={
            "asset_id": asset_id,
            "asset_status": asset_status,
            "sensor_id": cal.sensor_id,
            "reading_digest": reading_digest,
            "tau": [cal.tau_min, cal.tau_max],
        },
        created_at=created_at,
        author=entity_id,
    )


def build_dk_provenance(
    ek: EngineeringKnowledge, dk: DomainKnowledge, author, created_at: float
) -> ProvenanceRecord:
    """How the asset behaved under its configuration, per lifecycle history."""
    entity_id = _require_provenance_writer(author)
    device = ek.device(dk.asset_id)
    return ProvenanceRecord(
        kind=ProvenanceKind.DK,
        payload={
            "asset_id": dk.asset_id,
            "history_digest": hexdigest_json(dk.to_obj()),
            "config": dict(device.config),
        },
        created_at=created_at,
        author=entity_id,
    )


def build_process_provenance(
    ek: EngineeringKnowledge,
    rule_id: str,
    rule_canonical: str,
    entity_id: str,
    association: Iterable[str],
    settings: Mapping[str, Any],
    author,
    created_at: float,
) -> ProvenanceRecord:
    """Who authored/updated which rule for which assets, under which settings."""
    entity_id_of_author = _require_provenance_writer(author)
    asset_ids = sorted(a for a in association if a in ek.asset_ids)
    sensor_ids = sorted(s for s in association if s in ek.sensor_ids)
    for any_id in association:
        _require_known(ek, any_id)
    return ProvenanceRecord(
        kind=ProvenanceKind.PROCESS,
        payload={
            "rule_id": rule_id,
            "rule_digest": hexdigest_json(rule_canonical),
            "entity_id": entity_id,
            "asset_ids": asset_ids,
            "sensor_ids": sensor_ids,
            "settings_digest": hexdigest_json(dict(settings)),
        },
        created_at=created_at,
        author=entity_id_of_author,
    )


# --- specification files ------------------------------------------------------
#
# Documented JSON schema, top-level keys: devices, sensors, topology,
# processes, calibration, domain_knowledge. Unknown keys are rejected at
# every level.

_TOP_KEYS = {"devices", "sensors", "topology", "processes", "calibration", "domain_knowledge"}


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SpecFormatError(f"unknown key(s) {sorted(unknown)} in {where}")


def _scalar_map(obj: Any, where: str) -> dict[str, Scalar]:
    if not isinstance(obj, dict):
        raise SpecFormatError(f"{where} must be an object")
    out: dict[str, Scalar] = {}
    for key, value in obj.items():
        if not isinstance(value, (str, int, float, bool)):
            raise SpecFormatError(f"{where}.{key} must be a scalar")
        out[str(key)] = value
    return out


@dataclass(frozen=True)
class SpecBundle:
    """Everything a specification file carries."""

    ek: EngineeringKnowledge
    calibration: tuple[CalibrationRecord, ...] = ()
    domain_knowledge: tuple[DomainKnowledge, ...] = ()

    def calibration_for(self, sensor_id: str) -> CalibrationRecord:
        for cal in self.calibration:
            if cal.sensor_id == sensor_id:
                return cal
        raise UnknownReference(f"no calibration for sensor {sensor_id!r}")

    def to_obj(self) -> dict:
        obj = self.ek.to_obj()
        obj["calibration"] = [c.to_obj() for c in self.calibration]
        obj["domain_knowledge"] = [d.to_obj() for d in self.domain_knowledge]
        return obj

    def to_canonical(self) -> bytes:
        return canonical_json(self.to_obj())


def parse_spec(obj: Any) -> SpecBundle:
    if not isinstance(obj, dict):
        raise SpecFormatError("specification root must be an object")
    _check_keys(obj, _TOP_KEYS, "specification")

    devices = []
    for i, item in enumerate(obj.get("devices", [])):
        if not isinstance(item, dict):
            raise SpecFormatError(f"devices[{i}] must be an object")
        _check_keys(
            item,
            {"asset_id", "name", "type", "make", "model", "standards", "config"},
            f"devices[{i}]",
        )
        devices.append(
            DeviceSpec(
                asset_id=str(item["asset_id"]),
                name=str(item.get("name", "")),
                device_type=str(item.get("type", "")),
                make=str(item.get("make", "")),
                model=str(item.get("model", "")),
                standards=tuple(str(s) for s in item.get("standards", [])),
                config=_scalar_map(item.get("config", {}), f"devices[{i}].config"),
            )
        )

    sensors = []
    for i, item in enumerate(obj.get("sensors", [])):
        if not isinstance(item, dict):
            raise SpecFormatError(f"sensors[{i}] must be an object")
        _check_keys(item, {"sensor_id", "sensor_type", "asset_id", "units"}, f"sensors[{i}]")
        sensors.append(
            SensorSpec(
                sensor_id=str(item["sensor_id"]),
                sensor_type=str(item["sensor_type"]),
                asset_id=str(item["asset_id"]),
                units=str(item.get("units", "")),
            )
        )

    topology = []
    for i, item in enumerate(obj.get("topology", [])):
        if not isinstance(item, dict):
            raise SpecFormatError(f"topology[{i}] must be an object")
        _check_keys(item, {"src", "dst"}, f"topology[{i}]")
        topology.append(TopologyLink(src=str(item["src"]), dst=str(item["dst"])))

    processes = []
    for i, item in enumerate(obj.get("processes", [])):
        if not isinstance(item, dict):
            raise SpecFormatError(f"processes[{i}] must be an object")
        _check_keys(item, {"process_id", "steps", "constraints"}, f"processes[{i}]")
        processes.append(
            ProcessSpec(
                process_id=str(item["process_id"]),
                steps=tuple(str(s) for s in item.get("steps", [])),
                constraints=tuple(str(c) for c in item.get("constraints", [])),
            )
        )

    calibration = []
    for i, item in enumerate(obj.get("calibration", [])):
        if not isinstance(item, dict):
            raise SpecFormatError(f"calibration[{i}] must be an object")
        _check_keys(
            item,
            {"sensor_id", "tau_min", "tau_max", "calibrated_at", "standard_ref"},
            f"calibration[{i}]",
        )
        try:
            calibration.append(
                CalibrationRecord(
                    sensor_id=str(item["sensor_id"]),
                    tau_min=float(item["tau_min"]),
                    tau_max=float(item["tau_max"]),
                    calibrated_at=float(item.get("calibrated_at", 0.0)),
                    standard_ref=str(item.get("standard_ref", "")),
                )
            )
        except ValueError as exc:
            raise SpecFormatError(f"calibration[{i}]: {exc}") from exc

    domain_knowledge = []
    for i, item in enumerate(obj.get("domain_knowledge", [])):
        if not isinstance(item, dict):
            raise SpecFormatError(f"domain_knowledge[{i}] must be an object")
        _check_keys(item, {"asset_id", "source", "history"}, f"domain_knowledge[{i}]")
        events = []
        for j, ev in enumerate(item.get("history", [])):
            if not isinstance(ev, dict):
                raise SpecFormatError(f"domain_knowledge[{i}].history[{j}] must be an object")
            _check_keys(
                ev, {"timestamp", "status", "config", "note"}, f"domain_knowledge[{i}].history[{j}]"
            )
            events.append(
                HistoryEvent(
                    timestamp=float(ev["timestamp"]),
                    status=str(ev["status"]),
                    config=_scalar_map(ev.get("config", {}), f"domain_knowledge[{i}].history[{j}].config"),
                    note=str(ev.get("note", "")),
                )
            )
        try:
            domain_knowledge.append(
                DomainKnowledge(
                    asset_id=str(item["asset_id"]),
                    source=str(item["source"]),
                    history=tuple(events),
                )
            )
        except ValueError as exc:
            raise SpecFormatError(f"domain_knowledge[{i}]: {exc}") from exc

    ek = EngineeringKnowledge(
        devices=tuple(devices),
        sensors=tuple(sensors),
        topology=tuple(topology),
        processes=tuple(processes),
    )
    return SpecBundle(ek=ek, calibration=tuple(calibration), domain_knowledge=tuple(domain_knowledge))


def load_spec(path: str | Path) -> SpecBundle:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecFormatError(f"{path}: {exc}") from exc
    return parse_spec(obj)


def dump_spec(bundle: SpecBundle, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(bundle.to_obj(), indent=2, sort_keys=False) + "\n", encoding="utf-8"
    )
