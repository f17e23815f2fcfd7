import json
import os

import pytest

from quantproxy.cli import main

from conftest import fixture_path

MODEL = fixture_path("convnet.json")
CALIB = fixture_path("calib16.json")
EVAL = fixture_path("eval64.json")


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def machine_records(out):
    return [json.loads(line) for line in out.strip().splitlines()]


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "score", "--nonsense")
        assert code == 1
        assert "usage" in err

    def test_missing_file_is_data_error(self, capsys):
        code, _, err = run_cli(capsys, "score", "--proxy", "w_l2",
                               "--model", "/does/not/exist.json",
                               "--calib", CALIB)
        assert code == 2
        assert err.strip()
        assert len(err.strip().splitlines()) == 1

    def test_infeasible_target_is_exit_3(self, capsys):
        code, _, err = run_cli(capsys, "allocate", "--proxy", "depth",
                               "--model", MODEL, "--calib", CALIB,
                               "--target-compression", "0.99")
        assert code == 3
        assert "infeasible" in err

    def test_dead_endpoint_without_fallback_is_exit_4(self, capsys, tmp_path):
        config = {
            "model_path": MODEL, "calib_path": CALIB, "eval_path": EVAL,
            "run_dir": str(tmp_path / "dead"), "generator_mode": "llm",
            "max_generations": 1,
            "endpoint": {"base_url": "http://127.0.0.1:9", "max_retries": 0,
                         "timeout": 0.2},
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        code, _, err = run_cli(capsys, "discover", "--config", str(path))
        assert code == 4


class TestEvalProxy:
    def test_finite_outputs_exit_zero(self, capsys):
        code, out, _ = run_cli(capsys, "--format", "machine", "eval-proxy",
                               "--proxy", "depth", "--model", MODEL,
                               "--calib", CALIB, "--eval", EVAL,
                               "--target-compression", "0.8")
        assert code == 0
        records = machine_records(out)
        ev = next(r for r in records if r["record"] == "eval_proxy")
        assert ev["phi"] == pytest.approx(0.44)
        assert ev["rho_sens"] == pytest.approx(-0.1)
        assert any(r["record"] == "assignment" for r in records)


class TestScore:
    def test_dump_stats_machine_records(self, capsys):
        code, out, _ = run_cli(capsys, "--format", "machine", "score",
                               "--model", MODEL, "--calib", CALIB,
                               "--dump-stats")
        assert code == 0
        records = machine_records(out)
        assert len(records) == 5
        assert all(r["record"] == "layer_stats" for r in records)
        assert [int(r["depth"]) for r in records] == [1, 2, 3, 4, 5]


class TestAllocate:
    def test_scores_file_and_output_file(self, capsys, tmp_path):
        scores = tmp_path / "scores.json"
        scores.write_text(json.dumps({"scores": [5, 4, 3, 2, 1]}))
        out_path = tmp_path / "bits.json"
        code, out, _ = run_cli(capsys, "--format", "machine", "allocate",
                               "--scores", str(scores), "--model", MODEL,
                               "--target-compression", "0.85",
                               "--out", str(out_path))
        assert code == 0
        doc = json.loads(out_path.read_text())
        assert {e["index"] for e in doc["layers"]} == {1, 2, 3, 4, 5}
        records = machine_records(out)
        cost = next(r for r in records if r["record"] == "cost")
        assert cost["compression_ratio"] >= 0.85


class TestDiscoverDeterminism:
    def test_same_seed_same_machine_output(self, capsys, tmp_path):
        outputs = []
        for name in ("r1", "r2"):
            code, out, _ = run_cli(
                capsys, "--format", "machine", "discover",
                "--model", MODEL, "--calib", CALIB, "--eval", EVAL,
                "--run-dir", str(tmp_path / name), "--seed", "0",
                "--mode", "offline", "--jobs", "1")
            assert code == 0
            outputs.append(out)
        assert outputs[0] == outputs[1]

    def test_inputs_never_mutated(self, capsys, tmp_path):
        before = {p: open(p, "rb").read() for p in (MODEL, CALIB, EVAL)}
        code, _, _ = run_cli(capsys, "discover", "--model", MODEL,
                             "--calib", CALIB, "--eval", EVAL,
                             "--run-dir", str(tmp_path / "ro"), "--seed", "1",
                             "--mode", "offline")
        assert code == 0
        for path, blob in before.items():
            assert open(path, "rb").read() == blob


class TestReport:
    def test_report_parses_machine_log(self, capsys, tmp_path):
        run_dir = str(tmp_path / "rep")
        code, _, _ = run_cli(capsys, "discover", "--model", MODEL,
                             "--calib", CALIB, "--eval", EVAL,
                             "--run-dir", run_dir, "--seed", "2",
                             "--mode", "offline")
        assert code == 0
        code, out, _ = run_cli(capsys, "--format", "machine", "report",
                               "--run-dir", run_dir)
        assert code == 0
        records = machine_records(out)
        rep = next(r for r in records if r["record"] == "report")
        assert rep["candidates"] == 48
        assert rep["partial"] is False
