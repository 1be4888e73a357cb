import json
import subprocess
import sys

import pytest

from distlist.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, EXIT_TRACE, main, sidecar_path
from distlist.scenarios import (
    BANK,
    ConfigError,
    ScenarioConfig,
    dump_config,
    load_scenario,
    parse_config,
    parse_script,
)

# config parsing


def test_parse_config_and_roundtrip():
    cfg = parse_config(
        """
        # comment
        protocol = tr
        seed = 7
        opMix = insert:3, delete:1
        netDelay = 2,5
        reorder = off
        script = 10 move 0 1; 5 split 1; 40 delink -
        """
    )
    assert cfg.protocol == "tr" and cfg.seed == 7 and cfg.reorder is False
    assert cfg.opMix == {"insert": 3.0, "delete": 1.0} and cfg.netDelay == (2, 5)
    assert [d.op for d in cfg.script] == ["split", "move", "delink"]  # sorted by tick
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize(
    "text",
    [
        "protocol = xx",
        "variant = skiplist",
        "colour = blue",
        "seed = many",
        "just words",
        "reorder = maybe",
        "theta = 50",  # must exceed the request timeout
        "netDelay = 5,2",
        "layout = 7:3",
        "script = 10 move 0",
        "script = 10 move 0 9",
        "opMix = insert:0",
    ],
)
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_script_parsing():
    (d,) = parse_script("12 split 3 1")
    assert (d.tick, d.op, d.args) == (12, "split", (3, 1))
    assert str(d) == "12 split 3 1"
    with pytest.raises(ConfigError):
        parse_script("7")


def test_scenario_bank():
    assert set(BANK) == {"quiescent-move", "hot-move", "split-storm", "reorder-adversary", "sorted-mixed"}
    for name in BANK:
        assert load_scenario(name).name == name
    with pytest.raises(ConfigError):
        load_scenario("nope")
    assert ScenarioConfig().validate()


# commands


def _run(argv, capsys):
    rc = main(argv)
    return rc, capsys.readouterr()


def _report(out):
    return json.loads(out.out)


def test_run_quiescent_move(capsys):
    rc, out = _run(["run", "--scenario", "quiescent-move", "--set", "linTrials=20"], capsys)
    rep = _report(out)
    assert rc == EXIT_OK and rep["ok"]
    assert rep["move_attempts"] == 1 and rep["move_aborts"] == 0
    assert set(rep["verdicts"]) == {"lin", "lookup", "replay", "counters"}
    for field in ("ops", "latency_ticks", "delegations", "replicates", "moves"):
        assert field in rep


def test_hot_sublist_am_aborts_tr_does_not(capsys):
    rc, out = _run(["run", "--scenario", "hot-move", "--verify", "replay"], capsys)
    assert rc == EXIT_OK and _report(out)["move_aborts"] >= 1
    rc, out = _run(["run", "--scenario", "hot-move", "--protocol", "tr", "--verify", "replay"], capsys)
    rep = _report(out)
    assert rc == EXIT_OK and rep["move_aborts"] == 0 and rep["replicates"] > 0


def test_verify_selection_and_overrides(capsys):
    rc, out = _run(
        ["run", "--seed", "3", "--steps", "5", "--script", "5 move 0 1", "--verify", "lookup", "--verify", "counters"],
        capsys,
    )
    rep = _report(out)
    assert rc == EXIT_OK and set(rep["verdicts"]) == {"lookup", "counters"} and rep["seed"] == 3


def test_config_file(tmp_path, capsys):
    path = tmp_path / "mine.cfg"
    path.write_text("protocol = tr\nsteps = 5\nlinTrials = 5\n")
    rc, out = _run(["run", "--config", str(path), "--report-out", str(tmp_path / "r.json")], capsys)
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rc == EXIT_OK and rep["protocol"] == "tr" and rep["scenario"] == "mine"


def test_config_errors_exit_2(tmp_path, capsys):
    assert _run(["run", "--set", "protocol=zz"], capsys)[0] == EXIT_CONFIG
    assert _run(["run", "--config", str(tmp_path / "missing.cfg")], capsys)[0] == EXIT_CONFIG
    assert _run(["stress", "--threads", "1"], capsys)[0] == EXIT_CONFIG


def _record(tmp_path, capsys, scenario="reorder-adversary"):
    trace = tmp_path / "run.trace"
    rc, _ = _run(["run", "--scenario", scenario, "--set", "linTrials=5", "--trace-out", str(trace)], capsys)
    assert rc == EXIT_OK
    return trace


@pytest.mark.parametrize("scenario", ["reorder-adversary", "split-storm"])
def test_trace_replay_identical(tmp_path, capsys, scenario):
    trace = _record(tmp_path, capsys, scenario)
    rc, out = _run(["replay", str(trace)], capsys)
    rep = _report(out)
    assert rc == EXIT_OK and rep["replay"]["identical"]


def test_verify_only_uses_recorded_observations(tmp_path, capsys):
    trace = _record(tmp_path, capsys)
    rc, out = _run(["replay", str(trace), "--verify-only"], capsys)
    rep = _report(out)
    assert rc == EXIT_OK and rep["mode"] == "verify-only" and rep["ok"]
    # a recorded violation makes the suite fail without re-simulating
    side = sidecar_path(trace)
    data = json.loads(side.read_text())
    data["observations"]["violations"].append(["counters", "planted"])
    side.write_text(json.dumps(data))
    rc, out = _run(["replay", str(trace), "--verify-only", "--verify", "counters"], capsys)
    assert rc == EXIT_FAIL and not _report(out)["verdicts"]["counters"]["ok"]


def test_tampered_trace_exit_3(tmp_path, capsys):
    trace = _record(tmp_path, capsys)
    lines = trace.read_text().splitlines(keepends=True)
    lines[5] = lines[5].replace("send", "recv", 1) if "send" in lines[5] else lines[5] + "x"
    trace.write_text("".join(lines))
    rc, out = _run(["replay", str(trace)], capsys)
    assert rc == EXIT_TRACE and "digest" in out.err


def test_version_mismatch_exit_3(tmp_path, capsys):
    trace = _record(tmp_path, capsys)
    text = trace.read_text().replace("distlist-trace/1", "distlist-trace/0", 1)
    trace.write_text(text)
    rc, out = _run(["replay", str(trace)], capsys)
    assert rc == EXIT_TRACE and "version" in out.err


def test_verify_only_without_sidecar_exit_3(tmp_path, capsys):
    trace = _record(tmp_path, capsys)
    sidecar_path(trace).unlink()
    assert _run(["replay", str(trace), "--verify-only"], capsys)[0] == EXIT_TRACE


def test_scenarios_command(capsys):
    rc, out = _run(["scenarios"], capsys)
    assert rc == EXIT_OK and out.out.split() == list(BANK)
    rc, out = _run(["scenarios", "sorted-mixed"], capsys)
    assert rc == EXIT_OK and "variant = sorted" in out.out


def test_stress_command(capsys):
    rc, out = _run(["stress", "--trials", "20"], capsys)
    rep = _report(out)
    assert rc == EXIT_OK and rep["violations"] == 0 and rep["trials"] == 20


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "distlist", "scenarios"], capture_output=True, text=True)
    assert proc.returncode == 0 and "hot-move" in proc.stdout
