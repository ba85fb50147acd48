import csv
import dataclasses
import json

import pytest

from cvqkd_eq.cli import EXIT_ERROR, EXIT_FAIL, EXIT_OK, main
from cvqkd_eq.config import load_preset


def small_config(tmp_path, scenario, n=4000):
    cfg = dataclasses.replace(load_preset(scenario), n_pulses=n)
    path = tmp_path / f"{scenario}.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_calibrate_exit_ok(tmp_path):
    assert main(["calibrate", "--out", str(tmp_path)]) == EXIT_OK
    data = json.loads((tmp_path / "calibration.json").read_text())
    assert data["expected_T_raw"] == pytest.approx(0.5412, rel=1e-6)
    assert main(["calibrate", "--out", str(tmp_path), "--format", "csv"]) == EXIT_OK
    assert (tmp_path / "calibration.csv").exists()


def test_exit_code_follows_checks(tmp_path):
    code = main(["reproduce-table1", "--config", str(small_config(tmp_path, "Fiber10km")), "--out",
                 str(tmp_path), "--format", "csv"])
    with open(tmp_path / "checks.csv") as fh:
        passed = [r["pass"] == "True" for r in csv.DictReader(fh)]
    assert len(passed) == 5
    assert code == (EXIT_OK if all(passed) else EXIT_FAIL)


def test_error_exits(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_ERROR
    assert main(["simulate", "--scenario", "Atlantis", "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["classify-report", "--scenario", "Fiber10km", "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["calibrate", "--scenario", "FreeSpaceWeak", "--out", str(tmp_path)]) == EXIT_ERROR
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 0}')
    assert main(["simulate", "--config", str(bad)]) == EXIT_ERROR
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["simulate", "--config", "a.json", "--scenario", "Fiber10km"])


@pytest.mark.parametrize("command,scenario,fmt", [
    ("simulate", "Fiber10km", "csv"),
    ("simulate", "FreeSpaceMedium", "json"),
    ("reproduce-table1", "Fiber10km", "json"),
    ("sweep-keyrate", "Fiber10km", "csv"),
    ("classify-report", "FreeSpaceStrong", "csv"),
    ("calibrate", "Fiber10km", "json"),
])
def test_byte_identical_reruns(tmp_path, command, scenario, fmt):
    cfg = small_config(tmp_path, scenario)
    runs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        assert main([command, "--config", str(cfg), "--out", str(out), "--format", fmt]) in (EXIT_OK, EXIT_FAIL)
        runs.append(outputs(out))
    assert runs[0] and runs[0] == runs[1]


def test_seed_override_changes_output(tmp_path):
    cfg = str(small_config(tmp_path, "Fiber10km"))
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "b")])
    a = json.loads((tmp_path / "a" / "run.json").read_text())
    b = json.loads((tmp_path / "b" / "run.json").read_text())
    assert b["config"]["seed"] == 5 and a["raw"] != b["raw"]
