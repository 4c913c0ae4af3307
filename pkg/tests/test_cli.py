"""CLI subcommands, exit codes, demo determinism."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from twinsec.icm import dump_spec
from twinsec.plant import FaultInjection, FaultKind, write_trace
from twinsec.reference import make_reference_trace, reference_bundle
from twinsec.service.cli import (
    EXIT_BROKEN_CHAIN,
    EXIT_FINDINGS,
    EXIT_OK,
    main,
)


@pytest.fixture()
def runner():
    return CliRunner()


def write_reference_spec(path: Path) -> Path:
    dump_spec(reference_bundle(), path)
    return path


class TestValidateSpec:
    def test_well_formed(self, runner, tmp_path):
        spec = write_reference_spec(tmp_path / "spec.json")
        result = runner.invoke(main, ["validate-spec", str(spec)])
        assert result.exit_code == EXIT_OK
        assert json.loads(result.output)["ok"] is True

    def test_findings_exit_one(self, runner, tmp_path):
        bundle = reference_bundle()
        obj = bundle.to_obj()
        obj["topology"].append({"src": "PLC1", "dst": "ghost"})
        (tmp_path / "bad.json").write_text(json.dumps(obj))
        result = runner.invoke(main, ["validate-spec", str(tmp_path / "bad.json")])
        assert result.exit_code == EXIT_FINDINGS
        assert "DANGLING_LINK" in result.output


class TestRunSim:
    def test_conveyor_nominal_exit_zero(self, runner, tmp_path):
        result = runner.invoke(
            main,
            [
                "run-sim", "conveyor", "--velocity", "2.0",
                "--load-tick", "0", "--load-tick", "30",
                "--out", str(tmp_path / "out"),
            ],
        )
        assert result.exit_code == EXIT_OK, result.output
        assert json.loads(result.output)["outcome"] == "optimal"
        assert (tmp_path / "out" / "run-1_report.json").exists()
        assert (tmp_path / "out" / "run-1_trace.ndjson").exists()

    def test_arm_breach_exit_nonzero_and_incident_file(self, runner, tmp_path):
        config = tmp_path / "tight.json"
        config.write_text(json.dumps({"tau_t": [20.0, 40.0]}))
        result = runner.invoke(
            main,
            [
                "run-sim", "arm", "--current", "8.0", "--pressure", "80.0", "--welds", "1",
                "--config", str(config), "--out", str(tmp_path / "out"),
            ],
        )
        assert result.exit_code == EXIT_FINDINGS
        incidents = json.loads((tmp_path / "out" / "run-1_incidents.json").read_text())
        assert incidents and incidents[0]["severity"] in ("warning", "critical")


class TestReplicate:
    def test_clean_trace_exit_zero(self, runner, tmp_path):
        trace_file = tmp_path / "trace.ndjson"
        write_trace(make_reference_trace(ticks=120), trace_file)
        result = runner.invoke(main, ["replicate", str(trace_file)])
        assert result.exit_code == EXIT_OK, result.output
        assert json.loads(result.output)["incidents"] == 0

    def test_faulted_trace_exit_one(self, runner, tmp_path):
        fault = FaultInjection(FaultKind.SENSOR_OFFSET, "s5", 100.0, (50, 80))
        trace_file = tmp_path / "trace.ndjson"
        write_trace(make_reference_trace(ticks=120, faults=[fault]), trace_file)
        result = runner.invoke(main, ["replicate", str(trace_file), "--machine"])
        assert result.exit_code == EXIT_FINDINGS
        body = json.loads(result.output)
        assert body["incidents"] >= 1
        assert abs(body["first_incident_tick"] - 50) <= 1


class TestVerifyCommand:
    def test_all_nominal_unsat_exit_zero(self, runner, tmp_path):
        result = runner.invoke(main, ["verify", "all", "--k", "30", "--out", str(tmp_path)])
        assert result.exit_code == EXIT_OK, result.output
        for name in ("P1", "P2", "P3"):
            verdict = json.loads((tmp_path / f"{name}.json").read_text())
            assert verdict["result"] == "unsat"

    def test_sabotaged_heating_p2_sat_exit_one(self, runner, tmp_path):
        config = tmp_path / "sabotage.json"
        config.write_text(json.dumps({"k_heat": 0.15}))
        result = runner.invoke(main, ["verify", "P2", "--k", "50", "--config", str(config)])
        assert result.exit_code == EXIT_FINDINGS
        assert '"result": "sat"' in result.output or '"sat"' in result.output


class TestLedgerCommands:
    def test_export_verify_query_roundtrip(self, runner, tmp_path):
        chain = tmp_path / "chain.bin"
        result = runner.invoke(main, ["ledger", "export", "--out", str(chain)])
        assert result.exit_code == EXIT_OK
        result = runner.invoke(main, ["ledger", "verify", str(chain)])
        assert result.exit_code == EXIT_OK
        assert json.loads(result.output)["intact"] is True
        result = runner.invoke(main, ["ledger", "query", str(chain), "--kind", "RuleEntry"])
        assert result.exit_code == EXIT_OK
        assert len(json.loads(result.output)) == 5

    def test_tampered_chain_exit_three_names_index(self, runner, tmp_path):
        chain = tmp_path / "chain.bin"
        runner.invoke(main, ["ledger", "export", "--out", str(chain)])
        blob = bytearray(chain.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        tampered = tmp_path / "tampered.bin"
        tampered.write_bytes(bytes(blob))
        result = runner.invoke(main, ["ledger", "verify", str(tampered)])
        assert result.exit_code != EXIT_OK
        if result.exit_code == EXIT_BROKEN_CHAIN:
            assert json.loads(result.output)["broken_index"] is not None


class TestDemo:
    def test_demo_writes_walkthrough_and_exits_zero(self, runner, tmp_path):
        result = runner.invoke(main, ["demo", "--out", str(tmp_path / "demo"), "--seed", "3"])
        assert result.exit_code == EXIT_OK, result.output
        summary = json.loads((tmp_path / "demo" / "summary.json").read_text())
        assert summary["ok"] is True
        assert summary["steps"]["conveyor"] == "optimal"
        assert summary["steps"]["verdicts"] == {"P1": "unsat", "P2": "unsat", "P3": "unsat"}
        for name in (
            "spec.json", "validation.json", "provenance.json", "conveyor_report.json",
            "arm_report.json", "breach_report.json", "tuned_report.json",
            "trace_clean.ndjson", "trace_faulty.ndjson", "replication_clean_report.json",
            "replication_fault_report.json", "chain.bin", "chain_verify.json",
        ):
            assert (tmp_path / "demo" / name).exists(), name
