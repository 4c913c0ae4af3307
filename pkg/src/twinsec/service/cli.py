"""Headless command-line interface.

Exit codes: 0 success and nothing flagged; 1 incidents, violations, sat
verdicts, or validation findings; 2 usage or input errors; 3 chain
integrity broken; 4 internal error. Every subcommand is expressible
through the HTTP API (see CLI_API_PARITY); the CLI runs the same
operations in process.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from ..canonical import canonical_json
from ..clock import LogicalClock
from ..errors import TwinSecError
from ..icm import load_spec, validate_spec
from ..ledger import EntryKind, KeyRegistry, Ledger, QueryFilter
from ..plant import FaultInjection, FaultKind, read_sensor, initial_state, read_trace, write_trace
from ..reference import bootstrap_world, make_reference_trace
from ..rules import Principal, Role
from ..icm import build_cv_provenance, build_dk_provenance, build_ek_provenance, build_process_provenance
from ..twin import (
    Bounds,
    Outcome,
    SimInputs,
    SYSTEM_PRINCIPAL,
    TwinConfig,
    replicate,
    run_arm_sim,
    run_conveyor_sim,
    run_log_lines,
    tune_and_rerun,
)
from ..verify import DEFAULT_BOUND_K, PropertyId, PropertySpec, bounded_explore
from .config import load_config

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_BROKEN_CHAIN = 3
EXIT_INTERNAL = 4

# every subcommand's API equivalent(s); asserted by the parity test
CLI_API_PARITY: dict[str, list[str]] = {
    "validate-spec": ["/api/spec/validate"],
    "run-sim": ["/api/runs/conveyor", "/api/runs/arm"],
    "replicate": ["/api/runs/replicate"],
    "verify": ["/api/verify"],
    "ledger-verify": ["/api/ledger/verify"],
    "ledger-query": ["/api/ledger/query"],
    "ledger-export": ["/api/ledger/export"],
    "demo": [
        "/api/spec/validate",
        "/api/runs/conveyor",
        "/api/runs/arm",
        "/api/runs/replicate",
        "/api/runs/{run_id}/tune",
        "/api/verify",
        "/api/ledger/verify",
        "/api/ledger/export",
        "/api/provenance",
    ],
    "serve": [],
}

PROPERTY_SHORT = {"P1": PropertyId.P1_TIME, "P2": PropertyId.P2_TEMPERATURE, "P3": PropertyId.P3_VELOCITY}


def _echo_json(obj, machine: bool) -> None:
    if machine:
        click.echo(canonical_json(obj).decode())
    else:
        click.echo(json.dumps(obj, indent=2, sort_keys=True))


def _load_twin_config(path: str | None) -> TwinConfig:
    if path is None:
        return TwinConfig()
    try:
        return TwinConfig.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"config {path}: {exc}")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class _Fail(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


@click.group()
def main() -> None:
    """Digital-twin security platform for the simulated assembly line."""


@main.command("validate-spec")
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--machine", is_flag=True, help="canonical single-line JSON output")
def cmd_validate_spec(spec_file: str, machine: bool) -> None:
    """Check a specification file against the EK well-formedness rules."""
    bundle = load_spec(spec_file)
    report = validate_spec(bundle.ek)
    _echo_json(report.to_obj(), machine)
    if not report.ok:
        sys.exit(EXIT_FINDINGS)


@main.command("run-sim")
@click.argument("scenario", type=click.Choice(["conveyor", "arm"]))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--velocity", type=float, default=None, help="conveyor velocity setpoint")
@click.option("--load-tick", "load_ticks", type=int, multiple=True, help="chassis load request tick (repeatable)")
@click.option("--current", type=float, default=None, help="arm current setpoint")
@click.option("--pressure", type=float, default=None, help="arm pressure setpoint")
@click.option("--welds", type=int, default=0, help="number of staged welds (arm)")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--machine", is_flag=True)
def cmd_run_sim(scenario, config_path, velocity, load_ticks, current, pressure, welds, seed, out_dir, machine):
    """Run a simulation-mode scenario on a fresh reference twin."""
    config = _load_twin_config(config_path)
    world = bootstrap_world(clock=LogicalClock(), key_seed=f"twinsec-cli-{seed}")
    if scenario == "conveyor":
        inputs = SimInputs(velocity=velocity, load_ticks=tuple(load_ticks))
        report = run_conveyor_sim(world.twin, config, inputs)
    else:
        inputs = SimInputs(current=current, pressure=pressure, weld_count=welds or 1)
        report = run_arm_sim(world.twin, config, inputs)
    if out_dir:
        out = Path(out_dir)
        _write_json(out / f"{report.run_id}_report.json", report.to_obj())
        write_trace(report.trace, _ensure(out / f"{report.run_id}_trace.ndjson"))
        (out / f"{report.run_id}_run.log").write_text("\n".join(run_log_lines(report)) + "\n")
        if report.incidents:
            _write_json(out / f"{report.run_id}_incidents.json", [i.to_obj() for i in report.incidents])
    _echo_json(
        {
            "run_id": report.run_id,
            "outcome": report.outcome.value,
            "o_count": report.o_count,
            "incidents": len(report.incidents),
            "rules_written": list(report.rules_written),
        },
        machine,
    )
    if report.outcome is Outcome.INCIDENT:
        sys.exit(EXIT_FINDINGS)


def _ensure(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


@main.command("replicate")
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), help="spec file with calibration")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--machine", is_flag=True)
def cmd_replicate(trace_file, spec_path, seed, out_dir, machine):
    """Replicate a recorded plant trace through the twin."""
    world = bootstrap_world(clock=LogicalClock(), key_seed=f"twinsec-cli-{seed}")
    records = read_trace(trace_file)
    calibration = None
    if spec_path:
        calibration = list(load_spec(spec_path).calibration)
    report = replicate(world.twin, records, calibration)
    if out_dir:
        out = Path(out_dir)
        _write_json(out / f"{report.run_id}_report.json", report.to_obj())
        (_ensure(out / f"{report.run_id}_run.log")).write_text("\n".join(run_log_lines(report)) + "\n")
        if report.incidents:
            _write_json(out / f"{report.run_id}_incidents.json", [i.to_obj() for i in report.incidents])
    _echo_json(
        {
            "run_id": report.run_id,
            "outcome": report.outcome.value,
            "incidents": len(report.incidents),
            "first_incident_tick": report.incidents[0].tick if report.incidents else None,
        },
        machine,
    )
    if report.incidents:
        sys.exit(EXIT_FINDINGS)


@main.command("verify")
@click.argument("prop", type=click.Choice(["P1", "P2", "P3", "all"]))
@click.option("--k", type=int, default=DEFAULT_BOUND_K, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="model config (sabotage goes here)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--machine", is_flag=True)
def cmd_verify(prop, k, config_path, out_dir, machine):
    """Bounded exploration of P1-P3 over the discretized input grid."""
    model = _load_twin_config(config_path)
    names = ["P1", "P2", "P3"] if prop == "all" else [prop]
    any_sat = False
    results = []
    for name in names:
        spec = PropertySpec.for_config(PROPERTY_SHORT[name], TwinConfig())
        verdict = bounded_explore(model, k, spec)
        any_sat = any_sat or verdict.sat
        results.append((name, verdict))
        if out_dir:
            _write_json(Path(out_dir) / f"{name}.json", verdict.to_obj())
    _echo_json(
        [
            {**v.to_obj(), "wall_seconds": round(v.wall_seconds, 3)}
            for _, v in results
        ],
        machine,
    )
    if any_sat:
        sys.exit(EXIT_FINDINGS)


@main.group("ledger")
def cmd_ledger() -> None:
    """Chain-file operations."""


def _load_chain(chain_file: str, seed: int) -> Ledger:
    led = Ledger(keys=KeyRegistry(f"twinsec-demo-{seed}"))
    led.load_file(chain_file)
    return led


@cmd_ledger.command("verify")
@click.argument("chain_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=0, help="key seed the chain was signed under")
@click.option("--machine", is_flag=True)
def cmd_ledger_verify(chain_file, seed, machine):
    """Verify an exported chain file; exit 3 naming the broken index."""
    led = _load_chain(chain_file, seed)
    status = led.verify_chain()
    _echo_json(status.to_obj(), machine)
    if not status.intact:
        sys.exit(EXIT_BROKEN_CHAIN)


@cmd_ledger.command("query")
@click.argument("chain_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice([k.value for k in EntryKind]), default=None)
@click.option("--rule-id", default=None)
@click.option("--asset-id", default=None)
@click.option("--seed", type=int, default=0)
@click.option("--machine", is_flag=True)
def cmd_ledger_query(chain_file, kind, rule_id, asset_id, seed, machine):
    """List matching entries of an exported chain, in chain order."""
    led = _load_chain(chain_file, seed)
    flt = QueryFilter(
        kind=EntryKind(kind) if kind else None, rule_id=rule_id, asset_id=asset_id
    )
    results = [
        {"block": index, "kind": e.kind.value, "payload": e.payload_obj()}
        for index, e in led.query(flt)
    ]
    _echo_json(results, machine)


@cmd_ledger.command("export")
@click.option("--out", "out_file", type=click.Path(dir_okay=False), required=True)
@click.option("--seed", type=int, default=0)
def cmd_ledger_export(out_file, seed):
    """Export a freshly bootstrapped reference chain to a file."""
    world = bootstrap_world(clock=LogicalClock(), key_seed=f"twinsec-demo-{seed}")
    world.ledger.export_file(out_file)
    click.echo(f"wrote {len(world.ledger)} blocks to {out_file}")


@main.command("demo")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--machine", is_flag=True)
def cmd_demo(out_dir, seed, machine):
    """Full reference-scenario walkthrough; deterministic for a given seed.

    Saves the spec, derives rules, runs both simulation scenarios, the
    breach-tune-rerun loop, clean and faulted replication, the three
    verification verdicts, and the chain export, all under --out.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = LogicalClock()
    world = bootstrap_world(clock=clock, key_seed=f"twinsec-demo-{seed}")
    twin, engine, ledger, bundle = world.twin, world.engine, world.ledger, world.bundle
    summary: dict = {"seed": seed, "steps": {}}

    # 1. specification saved and validated
    _write_json(out / "spec.json", bundle.to_obj())
    report = validate_spec(bundle.ek)
    _write_json(out / "validation.json", report.to_obj())
    summary["steps"]["validation"] = "ok" if report.ok else "findings"

    # 2. provenance for the trusted inputs
    analyst = Principal("an1", frozenset({Role.SECURITY_ANALYST}))
    now = float(clock.now())
    provenance = []
    for sensor in bundle.ek.sensors:
        provenance.append(build_ek_provenance(bundle.ek, sensor.asset_id, sensor.sensor_id, analyst, now))
    state0 = initial_state(twin.plant_config, rng_seed=seed)
    reading = read_sensor(state0, "s1")
    provenance.append(
        build_cv_provenance(bundle.ek, "PLC1", "on", reading, bundle.calibration_for("s1"), analyst, now)
    )
    for dk in bundle.domain_knowledge:
        provenance.append(build_dk_provenance(bundle.ek, dk, analyst, now))
    first_rule = engine.all_rules()[0]
    provenance.append(
        build_process_provenance(
            bundle.ek, first_rule.rule_id, first_rule.description.canonical(), first_rule.author,
            first_rule.association, TwinConfig().settings(), analyst, now,
        )
    )
    ledger.append(
        [ledger.make_entry(EntryKind.PROVENANCE, p.to_obj()) for p in provenance],
        SYSTEM_PRINCIPAL,
    )
    _write_json(out / "provenance.json", [p.to_obj() for p in provenance])
    summary["steps"]["provenance"] = len(provenance)

    # 3. conveyor simulation, nominal
    conveyor = run_conveyor_sim(
        twin, TwinConfig(max_ticks=200), SimInputs(velocity=2.0, load_ticks=(0, 30, 60))
    )
    _write_json(out / "conveyor_report.json", conveyor.to_obj())
    write_trace(conveyor.trace, out / "conveyor_trace.ndjson")
    (out / "conveyor_run.log").write_text("\n".join(run_log_lines(conveyor)) + "\n")
    summary["steps"]["conveyor"] = conveyor.outcome.value

    # 4. arm simulation, six welds to show the capacity health check
    arm = run_arm_sim(twin, TwinConfig(), SimInputs(current=5.0, pressure=50.0, weld_count=6))
    _write_json(out / "arm_report.json", arm.to_obj())
    write_trace(arm.trace, out / "arm_trace.ndjson")
    (out / "arm_run.log").write_text("\n".join(run_log_lines(arm)) + "\n")
    summary["steps"]["arm"] = arm.outcome.value

    # 5. thermal breach, then the tune-settings-and-rerun loop
    breach = run_arm_sim(
        twin, TwinConfig(tau_t=Bounds(20.0, 40.0)), SimInputs(current=8.0, pressure=80.0, weld_count=2)
    )
    _write_json(out / "breach_report.json", breach.to_obj())
    tuned = tune_and_rerun(twin, breach, TwinConfig(tau_t=Bounds(20.0, 80.0)))
    _write_json(out / "tuned_report.json", tuned.to_obj())
    summary["steps"]["breach"] = breach.outcome.value
    summary["steps"]["tuned"] = tuned.outcome.value
    summary["steps"]["lineage"] = tuned.parent_run_id

    # 6. clean replication: the twin mirrors a healthy line
    clean_trace = make_reference_trace(ticks=500, rng_seed=seed)
    write_trace(clean_trace, out / "trace_clean.ndjson")
    clean = replicate(twin, clean_trace, list(bundle.calibration))
    _write_json(out / "replication_clean_report.json", clean.to_obj())
    summary["steps"]["replication_clean_incidents"] = len(clean.incidents)

    # 7. faulted replication: an offset drives s5 out of its bounds
    fault = FaultInjection(FaultKind.SENSOR_OFFSET, "s5", 100.0, (200, 260))
    faulty_trace = make_reference_trace(ticks=500, faults=[fault], rng_seed=seed)
    write_trace(faulty_trace, out / "trace_faulty.ndjson")
    faulty = replicate(twin, faulty_trace, list(bundle.calibration))
    _write_json(out / "replication_fault_report.json", faulty.to_obj())
    (out / "replication_fault_run.log").write_text("\n".join(run_log_lines(faulty)) + "\n")
    summary["steps"]["replication_fault_incidents"] = len(faulty.incidents)
    summary["steps"]["replication_first_incident_tick"] = (
        faulty.incidents[0].tick if faulty.incidents else None
    )

    # 8. bounded verification of the three properties
    verdicts = {}
    for name, pid in PROPERTY_SHORT.items():
        verdict = bounded_explore(TwinConfig(), DEFAULT_BOUND_K, PropertySpec.for_config(pid, TwinConfig()))
        _write_json(out / "verdicts" / f"{name}.json", verdict.to_obj())
        verdicts[name] = verdict.result
    summary["steps"]["verdicts"] = verdicts

    # 9. chain export + integrity
    ledger.export_file(out / "chain.bin")
    status = ledger.verify_chain()
    _write_json(out / "chain_verify.json", status.to_obj())
    summary["steps"]["chain"] = "intact" if status.intact else f"broken@{status.broken_index}"

    expected = (
        summary["steps"]["validation"] == "ok"
        and conveyor.outcome is Outcome.OPTIMAL
        and arm.outcome is Outcome.CAPACITY_REACHED
        and breach.outcome is Outcome.INCIDENT
        and tuned.outcome is Outcome.OPTIMAL
        and len(clean.incidents) == 0
        and len(faulty.incidents) >= 1
        and all(v == "unsat" for v in verdicts.values())
        and status.intact
    )
    summary["ok"] = expected
    _write_json(out / "summary.json", summary)
    _echo_json(summary, machine)
    if not expected:
        sys.exit(EXIT_FINDINGS)


@main.command("serve")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--static-dir", default=None, help="serve the console from this directory")
@click.option("--logical-clock", is_flag=True, default=None)
def cmd_serve(host, port, config_path, static_dir, logical_clock):
    """Start the HTTP/WebSocket API server."""
    import uvicorn

    from .api import create_app

    overrides = {"host": host, "port": port, "static_dir": static_dir}
    if logical_clock:
        overrides["logical_clock"] = True
    config = load_config(overrides=overrides, config_path=config_path)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")


def entrypoint() -> None:
    try:
        main(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.exceptions.Abort:
        sys.exit(EXIT_USAGE)
    except TwinSecError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except SystemExit:
        raise
    except Exception as exc:  # pragma: no cover - last resort
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


if __name__ == "__main__":
    entrypoint()
