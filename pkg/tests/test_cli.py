import json
import subprocess
import sys

from edgebench.cli import build_parser, main, settings_from_args


def test_run_sim(tmp_path, capsys):
    code = main(["run", "--scenario", "I,IV", "--sim-time", "--duration", "10", "--repetitions", "1", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("Scenario")
    doc = json.loads((tmp_path / "report_I.json").read_text())
    assert doc["aggregate"]["measured_loss_pct"] == 90.0
    assert doc["scenario"]["mode"] == "sim-time"
    assert not (tmp_path / "report_II.json").exists()


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nduration = 7\nrepetitions = 4\n")
    args = build_parser().parse_args(["run", "--config", str(cfg), "--repetitions", "2", "--no-netem", "--paper-scale"])
    s = settings_from_args(args)
    assert (s.duration_s, s.repetitions, s.netem, s.paper_scale) == (7.0, 2, False, True)


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nduration = soon\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "c.ini:2" in capsys.readouterr().err
    assert main(["run", "--scenario", "XII", "--sim-time"]) == 2


def test_failing_verdict_exit_code(tmp_path):
    # saturating the stage pushes scenario II far past its prediction
    code = main(["run", "--scenario", "II", "--sim-time", "--duration", "10", "--repetitions", "1",
                 "--producers", "10", "--per-cpu-rate", "0.2", "--queue-per-gb", "1", "--out", str(tmp_path)])
    assert code == 1


def test_probe(capsys):
    assert main(["probe"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("RTT")
    assert "uplink_5g" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "edgebench", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "run" in proc.stdout and "probe" in proc.stdout
