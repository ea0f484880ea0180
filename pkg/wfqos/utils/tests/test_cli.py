import argparse

import orjson
import pytest

from ...commands import sys_info as sys_info_script
from ...commands.cli import EXIT_CONFIG, EXIT_OK, main, parse_agents

SCENARIO = """\
name: cli
seed: 1
duration_s: 60
capacity:
  epochs:
    - [0, 40]
profiles:
  - {mbps: 1}
  - {mbps: 5}
  - {mbps: 10}
  - {mbps: 20}
agent_count: 3
workload:
  mean_interarrival_s: 20
  phases: [2, 2]
  phase_duration_s: [5, 10]
  preferred_mbps:
    critical_inspection: [20]
    routine_monitoring: [5, 10]
    background_sensing: [1]
"""


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "cli.yaml"
    path.write_text(SCENARIO)
    return path


def test_parse_agents():
    assert parse_agents("50:185:15") == list(range(50, 186, 15))
    assert parse_agents("5,10,20") == [5, 10, 20]
    for bad in ("1:2", "10:20:0", "a,b"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_agents(bad)


def test_validate_config(scenario, capsys):
    assert main(["validate-config", str(scenario)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ok (cli, coordinated, 3 agents" in out
    assert main(["validate-config", "testbed"]) == EXIT_OK


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(SCENARIO + "colour: red\n")
    assert main(["validate-config", str(path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "config error" in err and "colour" in err


def test_run_writes_outputs(scenario, tmp_path):
    out = tmp_path / "results"
    code = main(
        ["run", "--config", str(scenario), "--mode", "baseline", "--out", str(out)]
    )
    assert code == EXIT_OK
    metrics = orjson.loads((out / "metrics.json").read_bytes())
    assert metrics["mode"] == "baseline"
    outcomes = ("completed_optimal", "completed_degraded", "failed")
    assert sum(metrics[k] for k in outcomes) == metrics["total_workflows"]
    assert (out / "events.ndjson").stat().st_size > 0
    lines = (out / "utilization.csv").read_text().splitlines()
    assert lines[0] == "time_s,capacity_mbps,delivered_mbps,utilization"
    assert len(lines) == 1 + round(metrics["duration_s"] * 10)
    assert metrics["duration_s"] >= 60


def test_sweep_writes_csv(scenario, tmp_path):
    out = tmp_path / "sweep"
    code = main(
        [
            "sweep",
            "--config",
            str(scenario),
            "--agents",
            "1,2",
            "--jobs",
            "1",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("agent_count,coordinated_total")
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2"]


def test_replay_testbed(tmp_path):
    out = tmp_path / "replay"
    assert main(["replay-testbed", "--out", str(out)]) == EXIT_OK
    summary = orjson.loads((out / "comparison.json").read_bytes())
    assert summary["interruptions"] == {"coordinated": 0, "baseline": 1}
    header = (out / "throughput.csv").read_text().splitlines()[0]
    assert header == "time_s,capacity_mbps,coordinated_mbps,baseline_mbps"


def test_usage_errors_exit_through_argparse():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2


def test_sys_info(capsys):
    assert main(["sys-info"]) == EXIT_OK
    assert "Platform:" in capsys.readouterr().out


def test_sys_info_script(capsys):
    with pytest.raises(SystemExit) as exc:
        sys_info_script.run(["--developer"])
    assert exc.value.code == EXIT_OK
    out = capsys.readouterr().out
    assert "Platform:" in out and "hypothesis" in out
