"""HTTP/WebSocket API. Payloads use the same JSON notation as spec files.

Every state-mutating endpoint names an action in the role matrix; the
caller authenticates with ``Authorization: Bearer <token-or-session>``.
One ordered bidirectional WebSocket at /api/stream carries telemetry
ticks, events, and incidents with monotone sequence numbers; reconnect
resumes from the last seen sequence number.
"""

from __future__ import annotations

import asyncio
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Query, Request, Response, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .. import __version__
from ..errors import (
    BudgetExceeded,
    CalibrationGap,
    ChainFormatError,
    ConfigInvalid,
    InvalidSpec,
    MalformedPredicate,
    MissingSignal,
    NotFound,
    NotTunable,
    SensorMismatch,
    SessionExpired,
    SetpointOutOfBounds,
    SpecFormatError,
    TraceParse,
    TwinSecError,
    Unauthorized,
    UnknownActuator,
    UnknownReference,
    UnknownRule,
    UnknownSensor,
)
from ..icm import (
    CalibrationRecord,
    build_cv_provenance,
    build_dk_provenance,
    build_ek_provenance,
    build_process_provenance,
    parse_spec,
    validate_spec,
)
from ..ledger import EntryKind, QueryFilter
from ..plant import FaultInjection, FaultKind, parse_trace, trace_to_text
from ..rules import Principal, parse_predicate
from ..twin import (
    SimInputs,
    TwinConfig,
    replicate,
    run_arm_sim,
    run_conveyor_sim,
    tune_and_rerun,
)
from ..verify import DEFAULT_BOUND_K, PropertyId, PropertySpec, bounded_explore
from .auth import ROLE_MATRIX, authorize
from .config import ServiceConfig, load_config
from .state import AppState, build_state

_STATUS_BY_ERROR: list[tuple[type, int]] = [
    (SessionExpired, 401),
    (Unauthorized, 403),
    (NotFound, 404),
    (UnknownRule, 404),
    (UnknownReference, 404),
    (UnknownSensor, 404),
    (UnknownActuator, 404),
    (BudgetExceeded, 413),
    (SetpointOutOfBounds, 422),
    (SpecFormatError, 422),
    (MalformedPredicate, 422),
    (ConfigInvalid, 422),
    (InvalidSpec, 422),
    (TraceParse, 422),
    (CalibrationGap, 422),
    (NotTunable, 422),
    (MissingSignal, 422),
    (SensorMismatch, 422),
    (ChainFormatError, 422),
    (TwinSecError, 400),
]


def _status_for(exc: TwinSecError) -> int:
    for etype, status in _STATUS_BY_ERROR:
        if isinstance(exc, etype):
            return status
    return 400


def _credential(request: Request) -> str:
    header = request.headers.get("authorization", "")
    if header.lower().startswith("bearer "):
        return header[7:].strip()
    raise Unauthorized("missing bearer credential")


def requires(action: str):
    async def dependency(request: Request) -> Principal:
        state: AppState = request.app.state.twinsec
        principal = state.sessions.resolve(_credential(request))
        authorize(principal, action)
        return principal

    return Depends(dependency)


# --- request bodies -----------------------------------------------------

class LoginBody(BaseModel):
    token: str


class SetpointBody(BaseModel):
    name: str
    value: float


class PlantControlBody(BaseModel):
    rate: float = 1.0
    ticks: int = Field(default=1, ge=1, le=100_000)


class FaultBody(BaseModel):
    kind: str
    target: str
    magnitude: float = 0.0
    window: tuple[int, int]


class RunBody(BaseModel):
    config: Optional[dict] = None
    inputs: dict = Field(default_factory=dict)
    faults: list[FaultBody] = Field(default_factory=list)


class ReplicateBody(BaseModel):
    trace_text: Optional[str] = None
    records: Optional[list[dict]] = None
    calibration: Optional[list[dict]] = None
    config: Optional[dict] = None


class TuneBody(BaseModel):
    config: dict


class RuleBody(BaseModel):
    description: str
    association: list[str]
    existing: Optional[str] = None


class LedgerQueryBody(BaseModel):
    kind: Optional[str] = None
    rule_id: Optional[str] = None
    asset_id: Optional[str] = None
    time_range: Optional[tuple[float, float]] = None


class VerifyBody(BaseModel):
    property: str
    k: int = DEFAULT_BOUND_K
    config: Optional[dict] = None


class ProvenanceBody(BaseModel):
    kind: str
    asset_id: Optional[str] = None
    sensor_id: Optional[str] = None
    rule_id: Optional[str] = None
    asset_status: Optional[str] = None


def _twin_config(state: AppState, obj: Optional[dict]) -> TwinConfig:
    if obj is None:
        return state.active_config
    return TwinConfig.from_obj(obj)


def _fault(body: FaultBody) -> FaultInjection:
    try:
        kind = FaultKind(body.kind)
    except ValueError as exc:
        raise SpecFormatError(f"unknown fault kind {body.kind!r}") from exc
    try:
        return FaultInjection(kind, body.target, body.magnitude, tuple(body.window))
    except ValueError as exc:
        raise SpecFormatError(str(exc)) from exc


def _calibration(items: Optional[list[dict]], state: AppState) -> list[CalibrationRecord] | None:
    if items is None:
        return list(state.bundle.calibration)
    try:
        return [
            CalibrationRecord(
                sensor_id=str(i["sensor_id"]),
                tau_min=float(i["tau_min"]),
                tau_max=float(i["tau_max"]),
                calibrated_at=float(i.get("calibrated_at", 0.0)),
                standard_ref=str(i.get("standard_ref", "")),
            )
            for i in items
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecFormatError(f"bad calibration record: {exc}") from exc


def create_app(config: ServiceConfig | None = None, state: AppState | None = None) -> FastAPI:
    config = config or load_config()
    app = FastAPI(title="twinsec", version=__version__)
    app.state.twinsec = state or build_state(config)

    @app.exception_handler(TwinSecError)
    async def twinsec_error_handler(request: Request, exc: TwinSecError):
        return JSONResponse(
            status_code=_status_for(exc),
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"error": "ValueError", "detail": str(exc)})

    def st(request: Request) -> AppState:
        return request.app.state.twinsec

    # -- session / meta ---------------------------------------------------

    @app.get("/api/health")
    async def health():
        return {"ok": True, "version": __version__}

    @app.post("/api/session")
    async def login(body: LoginBody, request: Request):
        return st(request).sessions.login(body.token).to_obj()

    @app.get("/api/meta")
    async def meta(request: Request, principal: Principal = requires("plant.read")):
        state = st(request)
        return {
            "version": __version__,
            "entity_id": principal.entity_id,
            "roles": sorted(r.value for r in principal.roles),
            "role_matrix": {a: sorted(r.value for r in roles) for a, roles in ROLE_MATRIX.items()},
            "active_config": state.active_config.to_obj(),
            "endpoints": sorted(
                {getattr(r, "path", "") for r in request.app.routes if getattr(r, "path", "").startswith("/api")}
            ),
            "twin_warnings": state.twin.warnings,
        }

    # -- specification ------------------------------------------------------

    @app.post("/api/spec/validate")
    async def spec_validate(body: dict, request: Request, principal: Principal = requires("spec.validate")):
        bundle = parse_spec(body)
        return validate_spec(bundle.ek).to_obj()

    @app.post("/api/spec")
    async def spec_upload(body: dict, request: Request, principal: Principal = requires("spec.upload")):
        state = st(request)
        bundle = parse_spec(body)
        report = validate_spec(bundle.ek)
        if not report.ok:
            raise InvalidSpec("; ".join(f"{f.code}:{f.subject}" for f in report.findings))
        state.replace_spec(bundle)
        return {"ok": True, "endpoints": list(state.twin.endpoints), "warnings": state.twin.warnings}

    @app.get("/api/spec")
    async def spec_get(request: Request, principal: Principal = requires("rules.read")):
        return st(request).bundle.to_obj()

    @app.post("/api/calibration")
    async def calibration_upload(
        body: dict, request: Request, principal: Principal = requires("calibration.upload")
    ):
        state = st(request)
        records = _calibration(body.get("calibration", []), state)
        bundle = state.bundle
        from dataclasses import replace as dc_replace

        state.replace_spec(dc_replace(bundle, calibration=tuple(records)))
        return {"ok": True, "count": len(records)}

    @app.post("/api/rules/derive")
    async def rules_derive(request: Request, principal: Principal = requires("rules.write")):
        state = st(request)
        written = state.engine.derive_threshold_rules(list(state.bundle.calibration), principal)
        state.twin.rebind_rules()
        return {"rules_written": written}

    # -- active configuration ---------------------------------------------

    @app.get("/api/config")
    async def config_get(request: Request, principal: Principal = requires("plant.read")):
        return st(request).active_config.to_obj()

    @app.post("/api/config")
    async def config_set(body: dict, request: Request, principal: Principal = requires("runs.execute")):
        state = st(request)
        state.active_config = TwinConfig.from_obj(body)
        state.room.config = state.active_config
        state.hub.publish("event", {"kind": "config_updated", "by": principal.entity_id})
        return state.active_config.to_obj()

    # -- live plant ---------------------------------------------------------

    @app.post("/api/plant/start")
    async def plant_start(body: PlantControlBody, request: Request, principal: Principal = requires("plant.control")):
        st(request).room.start(rate=body.rate)
        return {"running": True, "rate": body.rate}

    @app.post("/api/plant/stop")
    async def plant_stop(request: Request, principal: Principal = requires("plant.control")):
        st(request).room.stop()
        return {"running": False}

    @app.post("/api/plant/step-rate")
    async def plant_step_rate(body: PlantControlBody, request: Request, principal: Principal = requires("plant.control")):
        room = st(request).room
        room.rate = body.rate
        return {"rate": room.rate}

    @app.post("/api/plant/step")
    async def plant_step(body: PlantControlBody, request: Request, principal: Principal = requires("plant.control")):
        return st(request).room.step_n(body.ticks)

    @app.get("/api/plant/state")
    async def plant_state(request: Request, principal: Principal = requires("plant.read")):
        room = st(request).room
        return {"running": room.running, "record": room.telemetry()}

    @app.post("/api/plant/setpoint")
    async def plant_setpoint(body: SetpointBody, request: Request, principal: Principal = requires("plant.setpoint")):
        return st(request).room.apply_setpoint(body.name, body.value, principal)

    @app.post("/api/plant/load")
    async def plant_load(request: Request, principal: Principal = requires("plant.setpoint")):
        return st(request).room.load_chassis()

    @app.post("/api/plant/fault")
    async def plant_fault(body: FaultBody, request: Request, principal: Principal = requires("plant.fault")):
        fault = _fault(body)
        st(request).room.inject_fault(fault, principal)
        return {"ok": True}

    # -- twin runs ------------------------------------------------------------

    @app.post("/api/runs/conveyor")
    async def runs_conveyor(body: RunBody, request: Request, principal: Principal = requires("runs.execute")):
        state = st(request)
        config = _twin_config(state, body.config)
        inputs = SimInputs.from_obj(body.inputs)
        report = run_conveyor_sim(
            state.twin, config, inputs, faults=[_fault(f) for f in body.faults], principal=principal
        )
        state.register_run(report)
        return report.to_obj()

    @app.post("/api/runs/arm")
    async def runs_arm(body: RunBody, request: Request, principal: Principal = requires("runs.execute")):
        state = st(request)
        config = _twin_config(state, body.config)
        inputs = SimInputs.from_obj(body.inputs)
        report = run_arm_sim(
            state.twin, config, inputs, faults=[_fault(f) for f in body.faults], principal=principal
        )
        state.register_run(report)
        return report.to_obj()

    @app.post("/api/runs/replicate")
    async def runs_replicate(body: ReplicateBody, request: Request, principal: Principal = requires("runs.execute")):
        state = st(request)
        if body.trace_text is not None:
            records = parse_trace(body.trace_text)
        elif body.records is not None:
            from ..plant import TraceRecord

            records = [TraceRecord.from_obj(o) for o in body.records]
        else:
            raise TraceParse("provide trace_text or records")
        calibration = _calibration(body.calibration, state)
        config = _twin_config(state, body.config)
        report = replicate(state.twin, records, calibration, config=config, principal=principal)
        state.register_run(report)
        return report.to_obj()

    @app.post("/api/runs/{run_id}/tune")
    async def runs_tune(run_id: str, body: TuneBody, request: Request, principal: Principal = requires("runs.execute")):
        state = st(request)
        previous = state.run_report(run_id)
        report = tune_and_rerun(state.twin, previous, TwinConfig.from_obj(body.config), principal=principal)
        state.register_run(report)
        return report.to_obj()

    @app.get("/api/runs")
    async def runs_index(request: Request, principal: Principal = requires("runs.read")):
        state = st(request)
        return [
            {
                "run_id": r.run_id,
                "mode": r.mode.value,
                "outcome": r.outcome.value,
                "incidents": len(r.incidents),
                "o_count": r.o_count,
                "parent_run_id": r.parent_run_id,
                "rules_written": list(r.rules_written),
            }
            for r in (state.runs[rid] for rid in state.run_order)
        ]

    @app.get("/api/runs/{run_id}")
    async def runs_get(run_id: str, request: Request, principal: Principal = requires("runs.read")):
        return st(request).run_report(run_id).to_obj()

    @app.get("/api/runs/{run_id}/log")
    async def runs_log(run_id: str, request: Request, principal: Principal = requires("runs.read")):
        return PlainTextResponse(st(request).run_log(run_id))

    @app.get("/api/runs/{run_id}/trace")
    async def runs_trace(run_id: str, request: Request, principal: Principal = requires("runs.read")):
        report = st(request).run_report(run_id)
        return PlainTextResponse(trace_to_text(report.trace), media_type="application/x-ndjson")

    @app.get("/api/incidents")
    async def incidents(request: Request, principal: Principal = requires("runs.read")):
        return st(request).all_incidents()

    # -- rules -----------------------------------------------------------------

    @app.post("/api/rules")
    async def rules_upsert(body: RuleBody, request: Request, principal: Principal = requires("rules.write")):
        state = st(request)
        predicate = parse_predicate(body.description)
        rule_id = state.engine.upsert_rule(
            principal, predicate, set(body.association), existing=body.existing
        )
        state.twin.rebind_rules()
        rule = state.engine.get_rule(rule_id)
        state.hub.publish("event", {"kind": "rule_upserted", "rule_id": rule_id, "version": rule.version})
        return rule.to_obj()

    @app.get("/api/rules")
    async def rules_index(request: Request, principal: Principal = requires("rules.read")):
        return [r.to_obj() for r in st(request).engine.all_rules()]

    @app.get("/api/rules/{rule_id}")
    async def rules_get(rule_id: str, request: Request, principal: Principal = requires("rules.read")):
        return st(request).engine.get_rule(rule_id).to_obj()

    @app.get("/api/rules/{rule_id}/history")
    async def rules_history(rule_id: str, request: Request, principal: Principal = requires("rules.read")):
        return [r.to_obj() for r in st(request).engine.get_rule_history(rule_id)]

    # -- provenance ---------------------------------------------------------------

    @app.post("/api/provenance")
    async def provenance(body: ProvenanceBody, request: Request, principal: Principal = requires("provenance.write")):
        state = st(request)
        ek = state.bundle.ek
        now = float(state.clock.now())
        if body.kind == "EK":
            if not (body.asset_id and body.sensor_id):
                raise SpecFormatError("EK provenance needs asset_id and sensor_id")
            record = build_ek_provenance(ek, body.asset_id, body.sensor_id, principal, now)
        elif body.kind == "CV":
            if not (body.asset_id and body.sensor_id):
                raise SpecFormatError("CV provenance needs asset_id and sensor_id")
            cal = state.bundle.calibration_for(body.sensor_id)
            room = state.room
            from ..plant import read_sensor

            reading = read_sensor(room.state, body.sensor_id, room.faults)
            status = body.asset_status or (
                "on" if room.state.assets_on.get(body.asset_id, False) else "off"
            )
            record = build_cv_provenance(ek, body.asset_id, status, reading, cal, principal, now)
        elif body.kind == "DK":
            dk = next((d for d in state.bundle.domain_knowledge if d.asset_id == body.asset_id), None)
            if dk is None:
                raise NotFound(f"no domain knowledge for {body.asset_id!r}")
            record = build_dk_provenance(ek, dk, principal, now)
        elif body.kind == "Process":
            if not body.rule_id:
                raise SpecFormatError("Process provenance needs rule_id")
            rule = state.engine.get_rule(body.rule_id)
            record = build_process_provenance(
                ek, rule.rule_id, rule.description.canonical(), rule.author,
                rule.association, state.active_config.settings(), principal, now,
            )
        else:
            raise SpecFormatError(f"unknown provenance kind {body.kind!r}")
        state.ledger.append(
            [state.ledger.make_entry(EntryKind.PROVENANCE, record.to_obj())], principal
        )
        return record.to_obj()

    # -- ledger ------------------------------------------------------------------

    @app.get("/api/ledger/blocks")
    async def ledger_blocks(
        request: Request,
        principal: Principal = requires("ledger.read"),
        offset: int = Query(default=0, ge=0),
        limit: int = Query(default=50, ge=1, le=500),
    ):
        ledger = st(request).ledger
        blocks = ledger.blocks[offset : offset + limit]
        return {
            "total": len(ledger),
            "blocks": [
                {
                    "index": b.index,
                    "timestamp": b.timestamp,
                    "author": b.author,
                    "hash": b.hash.hex(),
                    "prev_hash": b.prev_hash.hex(),
                    "entries": [
                        {"kind": e.kind.value, "payload": e.payload_obj(), "payload_digest": e.payload_digest.hex()}
                        for e in b.entries
                    ],
                }
                for b in blocks
            ],
        }

    @app.get("/api/ledger/verify")
    async def ledger_verify(request: Request, principal: Principal = requires("ledger.read")):
        return st(request).ledger.verify_chain().to_obj()

    @app.post("/api/ledger/query")
    async def ledger_query(body: LedgerQueryBody, request: Request, principal: Principal = requires("ledger.read")):
        kind = EntryKind(body.kind) if body.kind else None
        results = st(request).ledger.query(
            QueryFilter(kind=kind, rule_id=body.rule_id, asset_id=body.asset_id, time_range=body.time_range)
        )
        return [
            {"block": index, "kind": e.kind.value, "payload": e.payload_obj()}
            for index, e in results
        ]

    @app.get("/api/ledger/export")
    async def ledger_export(request: Request, principal: Principal = requires("ledger.read")):
        return Response(
            content=st(request).ledger.export_bytes(), media_type="application/octet-stream"
        )

    # -- verification ----------------------------------------------------------------

    @app.post("/api/verify")
    async def verify_run(body: VerifyBody, request: Request, principal: Principal = requires("verify.run")):
        state = st(request)
        config = _twin_config(state, body.config)
        name = body.property.upper()
        by_short = {"P1": PropertyId.P1_TIME, "P2": PropertyId.P2_TEMPERATURE, "P3": PropertyId.P3_VELOCITY}
        if name in by_short:
            pid = by_short[name]
        else:
            try:
                pid = PropertyId(body.property)
            except ValueError as exc:
                raise SpecFormatError(f"unknown property {body.property!r}") from exc
        prop = PropertySpec.for_config(pid, state.active_config)
        verdict = bounded_explore(config, body.k, prop)
        return {**verdict.to_obj(), "wall_seconds": verdict.wall_seconds}

    # -- stream ------------------------------------------------------------------------

    @app.get("/api/stream/backlog")
    async def stream_backlog(
        request: Request,
        principal: Principal = requires("stream.subscribe"),
        since: int = Query(default=0, ge=0),
    ):
        return {"messages": st(request).hub.backlog(since)}

    @app.websocket("/api/stream")
    async def stream(websocket: WebSocket, token: str = Query(default=""), since: int = Query(default=0)):
        state: AppState = websocket.app.state.twinsec
        try:
            principal = state.sessions.resolve(token)
            authorize(principal, "stream.subscribe")
        except TwinSecError as exc:
            await websocket.close(code=4403, reason=str(exc))
            return
        await websocket.accept()
        queue = state.hub.subscribe()
        try:
            for message in state.hub.backlog(since):
                await websocket.send_json(message)

            async def pump_client():
                while True:
                    data = await websocket.receive_json()
                    if data.get("type") == "ping":
                        await websocket.send_json({"seq": -1, "channel": "pong", "payload": {}})
                    elif data.get("type") == "resume":
                        for message in state.hub.backlog(int(data.get("since", 0))):
                            await websocket.send_json(message)

            async def pump_hub():
                while True:
                    message = await queue.get()
                    await websocket.send_json(message)

            client_task = asyncio.create_task(pump_client())
            hub_task = asyncio.create_task(pump_hub())
            done, pending = await asyncio.wait(
                {client_task, hub_task}, return_when=asyncio.FIRST_COMPLETED
            )
            for task in pending:
                task.cancel()
            for task in done:
                exc = task.exception()
                if exc is not None and not isinstance(
                    exc, (WebSocketDisconnect, RuntimeError)
                ):
                    raise exc
        except WebSocketDisconnect:
            pass
        finally:
            state.hub.unsubscribe(queue)

    # -- console static files -------------------------------------------------------------

    static_dir = config.static_dir
    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
