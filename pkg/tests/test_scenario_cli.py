import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from nonauto_io.errors import ConfigError
from nonauto_io.scenario_cli import (
    BUNDLED_DIR,
    EXIT_CONFIG,
    EXIT_FAIL,
    EXIT_PASS,
    load_scenario,
    main,
    resolve_scenario,
    run_scenario,
)

SMALL = """
name = "small_string"
seed = 3

[system]
kind = "string"

[controller]
kind = "dynamic"
K_c = [[1.0]]
B_c = [[1.0]]
S_c = [[1.0]]
potential = {{ kind = "quadratic", Q = [[1.0]] }}
damping = {{ kind = "linear", gain = 1.0 }}

[input]
kind = "sin2"
amplitude = 1.0

[initial_state]
kind = "random"
scale = 0.2

[numerics]
n_cells = 8
{dt_line}
t_end = 0.5
method = "midpoint"

[[checks]]
name = "{check}"
"""


def write_small(tmp_path, dt_line="dt = 1e-2", check="impedance", name="small.toml"):
    p = tmp_path / name
    p.write_text(SMALL.format(dt_line=dt_line, check=check))
    return p


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_string_zero_is_silent(tmp_path):
    assert main(["run", "string_zero", "--out", str(tmp_path)]) == EXIT_PASS
    header, table = read_csv(tmp_path / "timeseries.csv")
    assert header[:3] == ["t", "norm_x", "V"] and header[-1] == "residual"
    assert np.all(table[:, 1:] == 0.0)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["pass"] and report["checks"]["equilibrium"]["max_state_norm"] == 0.0


def test_string_impedance_refines(tmp_path):
    base = load_scenario(resolve_scenario("string_impedance"), {"t_end": 1.0})
    fine = load_scenario(resolve_scenario("string_impedance"), {"t_end": 1.0, "dt": 5e-4})
    rep, ok = run_scenario(base, tmp_path / "a")
    rep_fine, ok_fine = run_scenario(fine, tmp_path / "b")
    assert ok and ok_fine
    v = rep["checks"]["impedance"]["max_violation"]
    assert rep_fine["checks"]["impedance"]["max_violation"] <= v + 1e-12


def test_missing_dt_is_config_error(tmp_path, capsys):
    p = write_small(tmp_path, dt_line="")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "numerics.dt" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    with pytest.raises(ConfigError) as exc:
        load_scenario(p)
    assert exc.value.field == "numerics.dt"


def test_negative_dt_is_config_error(tmp_path):
    p = write_small(tmp_path, dt_line="dt = -1.0")
    with pytest.raises(ConfigError, match="numerics.dt"):
        load_scenario(p)


def test_unknown_check_name(tmp_path, capsys):
    p = write_small(tmp_path, check="telepathy")
    assert main(["run", str(p)]) == EXIT_CONFIG
    assert "checks[0].name" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "absent.toml")]) == EXIT_CONFIG


def test_csv_row_count(tmp_path):
    p = write_small(tmp_path, dt_line="dt = 0.03")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_PASS
    _, table = read_csv(tmp_path / "o" / "timeseries.csv")
    assert table.shape[0] == math.floor(0.5 / 0.03) + 1
    assert np.all(np.diff(table[:, 0]) > 0)


def test_overrides_apply(tmp_path):
    p = write_small(tmp_path)
    assert main(["run", str(p), "--out", str(tmp_path / "o"), "--n-cells", "4", "--t-end",
                 "0.2", "--seed", "9"]) == EXIT_PASS
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["system"]["n_cells"] == 4 and report["seed"] == 9
    assert report["trajectory"]["points"] == 21


def test_failing_check_exit_code(tmp_path):
    p = tmp_path / "bad.toml"
    # impedance with an inflated feedthrough constant must fail
    p.write_text(SMALL.format(dt_line="dt = 1e-2", check="impedance")
                 + "sigma = 4.0\ntolerance = 1e-4\n")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_FAIL
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["failing"] == ["impedance"]


def test_batch(tmp_path):
    d = tmp_path / "cfg"
    d.mkdir()
    write_small(d, name="a.toml")
    write_small(d, check="ugs", name="b.toml")
    assert main(["run", "--batch", str(d), "--out", str(tmp_path / "o")]) == EXIT_PASS
    assert (tmp_path / "o" / "a" / "report.json").exists()
    assert (tmp_path / "o" / "b" / "report.json").exists()
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["run", "--batch", str(empty)]) == EXIT_CONFIG


def test_list(capsys):
    assert main(["list"]) == EXIT_PASS
    names = capsys.readouterr().out.split()
    assert names == sorted(p.stem for p in BUNDLED_DIR.glob("*.toml"))
    assert {"string_zero", "string_impedance", "timoshenko_zero", "eb_cubic"} <= set(names)


def test_no_command():
    assert main([]) == EXIT_CONFIG
    assert main(["run"]) == EXIT_CONFIG


def test_deterministic_report(tmp_path):
    p = write_small(tmp_path, check="scattering")
    for sub in ("a", "b"):
        assert main(["run", str(p), "--out", str(tmp_path / sub)]) == EXIT_PASS
    a, b = ((tmp_path / s / "report.json").read_bytes() for s in ("a", "b"))
    assert a == b
    assert (tmp_path / "a" / "timeseries.csv").read_bytes() == \
        (tmp_path / "b" / "timeseries.csv").read_bytes()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "nonauto_io", "list"], capture_output=True,
                         text=True, check=True)
    assert "string_zero" in out.stdout.split()
