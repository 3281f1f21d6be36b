import json

import pytest

from adcell.main import main
from adcell.schemas import dump_scenario, dump_stream, load_instance
from adcell.services.model import Scenario
from adcell.services.online import stream_from_scenario


@pytest.fixture
def gap_file(tmp_path):
    path = tmp_path / "gap.json"
    assert main(["gen", "integrality-gap", "--n", "4", "-o", str(path)]) == 0
    return path


@pytest.fixture
def half_tight_file(tmp_path):
    path = tmp_path / "half.json"
    assert main(["gen", "half-tight", "--eps", "1/10", "-o", str(path)]) == 0
    return path


class TestGen:
    def test_writes_instance(self, gap_file):
        inst = load_instance(gap_file)
        assert inst.n == 4

    def test_random_is_seeded(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for path in (a, b):
            assert main(["gen", "random", "--m", "3", "--n", "5", "--s", "2", "--seed", "7", "-o", str(path)]) == 0
        assert a.read_text() == b.read_text()


class TestLp:
    def test_expectation_objective(self, gap_file, capsys):
        assert main(["lp", "-i", str(gap_file), "--variant", "b", "--mode", "expectation"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["objective"] == "1"
        assert out["status"] == "optimal"

    def test_realized_with_scenario_and_dump(self, gap_file, tmp_path, capsys):
        scenario = tmp_path / "s.json"
        dump_scenario(Scenario(arrived=(True, True, False, False)), scenario)
        dump = tmp_path / "lp.txt"
        code = main([
            "lp", "-i", str(gap_file), "--variant", "c", "--mode", "realized",
            "--scenario", str(scenario), "--dump", str(dump),
        ])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["objective"] == "2"
        assert "subject to:" in dump.read_text()

    def test_missing_file_exits_one(self, tmp_path):
        assert main(["lp", "-i", str(tmp_path / "nope.json"), "--variant", "b", "--mode", "expectation"]) == 1


class TestSolveOffline:
    def test_prints_revenue_and_writes_trace(self, half_tight_file, tmp_path, capsys):
        scenario = tmp_path / "s.json"
        dump_scenario(Scenario(arrived=(True, True)), scenario)
        trace = tmp_path / "trace.jsonl"
        code = main([
            "solve-offline", "-i", str(half_tight_file), "--scenario", str(scenario),
            "--seed", "3", "--trace", str(trace),
        ])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["revenue"] == "9"
        assert out["lp_objective"] == "9"
        assert trace.exists()


class TestOracle:
    def test_online_value(self, half_tight_file, capsys):
        assert main(["oracle", "-i", str(half_tight_file), "--which", "online"]) == 0
        assert capsys.readouterr().out.strip() == "99/100"

    def test_offline_needs_scenario(self, half_tight_file):
        assert main(["oracle", "-i", str(half_tight_file), "--which", "offline"]) == 1

    def test_size_guard_exits_two(self, gap_file, monkeypatch):
        monkeypatch.setenv("ADCELL_ORACLE_MAX_SCENARIOS", "2")
        assert main(["oracle", "-i", str(gap_file), "--which", "expected-offline"]) == 2


class TestSimulate:
    def test_report_and_csv(self, half_tight_file, tmp_path, capsys):
        csv_path = tmp_path / "runs.csv"
        for _ in range(2):
            code = main([
                "simulate", "-i", str(half_tight_file), "--policy", "ipc",
                "--trials", "100", "--seed", "1", "--csv", str(csv_path),
            ])
            assert code == 0
        report = json.loads(capsys.readouterr().out.split("\n}\n")[0] + "\n}")
        assert report["policy"] == "ipc"
        assert report["reference"] == "9/5"
        assert len(csv_path.read_text().splitlines()) == 3

    def test_replays_a_supplied_stream(self, half_tight_file, tmp_path, capsys):
        inst = load_instance(half_tight_file)
        stream = tmp_path / "stream.jsonl"
        dump_stream(stream_from_scenario(inst, Scenario(arrived=(False, True))), stream)
        code = main([
            "simulate", "-i", str(half_tight_file), "--policy", "ipc",
            "--trials", "100", "--seed", "3", "--stream", str(stream),
        ])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["reference_label"] == "realized-lp-c"
        assert report["reference"] == "9"
        assert report["meets_guarantee"] is None

    def test_stream_for_another_instance_exits_one(self, half_tight_file, gap_file, tmp_path):
        stream = tmp_path / "stream.jsonl"
        gap = load_instance(gap_file)
        dump_stream(stream_from_scenario(gap, Scenario(arrived=(True, False, False, False))), stream)
        args = ["simulate", "-i", str(half_tight_file), "--policy", "ipc", "--trials", "100", "--seed", "3"]
        assert main(args + ["--stream", str(stream)]) == 1

    def test_too_few_trials_exits_one(self, half_tight_file):
        assert main(["simulate", "-i", str(half_tight_file), "--policy", "ipb", "--trials", "10", "--seed", "1"]) == 1


class TestVerify:
    def test_random_instance_passes(self, tmp_path, capsys):
        path = tmp_path / "r.json"
        assert main(["gen", "random", "--m", "3", "--n", "5", "--s", "2", "--seed", "7", "-o", str(path)]) == 0
        assert main(["verify", "-i", str(path), "--seed", "7", "--trials", "20"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["passed"]
        assert {c["name"] for c in out["checks"]} >= {"lp-variant-order", "rounding-constraints", "oracle-sandwich"}
