import json
import subprocess
import sys

import pytest

from orderpos.cli import ConfigError, main, parse_config

REFERENCE_REGIME_FLUID = """\
[fluid]
lam = 1
vbar = 1, 0.6, 0.8, 1, 0.7, 0.8
qb = 100
qa = 100
z = 100
"""

SIMULATE = """\
[run]
seed = 7

[simulate]
arrival = poisson
rate = 1
vbar = 1, 0.6, 0.8, 1, 0.7, 0.8
n = 20
qb0 = 1
qa0 = 1
z0 = 0.5
horizon = 3
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_fluid_command_reports_hitting_times(tmp_path, capsys):
    cfg = write(tmp_path, REFERENCE_REGIME_FLUID)
    out = tmp_path / "out"
    assert main(["fluid", "--config", cfg, "--out", str(out)]) == 0
    res = json.loads((out / "fluid.json").read_text())
    assert abs(res["tau_z"] - 100.0) < 1e-9
    assert abs(res["tau_a"] - 200.0) < 1e-9 and abs(res["tau_b"] - 250.0) < 1e-9
    rows = (out / "fluid.csv").read_text().splitlines()
    assert rows[0] == "t,qb,qa,z" and len(rows) == 202
    assert "fluid.json" in capsys.readouterr().out


def test_json_config_equivalent_to_ini(tmp_path):
    ini = write(tmp_path, REFERENCE_REGIME_FLUID)
    js = write(tmp_path, json.dumps({"fluid_engine": {"lam": 1, "vbar": [1, .6, .8, 1, .7, .8],
                                                      "qb": 100, "qa": 100, "z": 100}}), "cfg.json")
    assert main(["fluid", "--config", ini, "--out", str(tmp_path / "a")]) == 0
    assert main(["fluid", "--config", js, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "fluid.json").read_text() == (tmp_path / "b" / "fluid.json").read_text()


def test_empty_config_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, "")
    assert main(["fluid", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "empty config" in capsys.readouterr().err


def test_unknown_key_reports_file_and_line(tmp_path, capsys):
    cfg = write(tmp_path, REFERENCE_REGIME_FLUID + "bogus = 3\n")
    assert main(["fluid", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert f"{cfg}:7" in err and "bogus" in err


def test_unknown_section_reports_line(tmp_path):
    with pytest.raises(ConfigError, match=r"c.ini:3: unknown section \[nope\]"):
        parse_config("[fluid]\nlam = 1\n[nope]\nx = 1\n", "c.ini")


def test_missing_config_is_usage_error(tmp_path):
    assert main(["fluid", "--out", str(tmp_path / "o")]) == 2


def test_bad_number_exits_2(tmp_path):
    cfg = write(tmp_path, REFERENCE_REGIME_FLUID.replace("qb = 100", "qb = abc"))
    assert main(["fluid", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_negative_workers_rejected(tmp_path):
    cfg = write(tmp_path, REFERENCE_REGIME_FLUID)
    assert main(["fluid", "--config", cfg, "--workers", "0", "--out", str(tmp_path / "o")]) == 2


def test_simulate_is_byte_identical_for_same_seed(tmp_path):
    cfg = write(tmp_path, SIMULATE)
    for d in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for f in ("simulate.json", "path.csv", "flows.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["simulate", "--config", cfg, "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "path.csv").read_bytes() != (tmp_path / "a" / "path.csv").read_bytes()
    res = json.loads((tmp_path / "a" / "simulate.json").read_text())
    assert res["seed"] == 7 and res["violations"] == 0


def test_diffusion_command(tmp_path):
    cfg = write(tmp_path, "[diffusion]\nmu = 0, 0\nsigma1 = 1\nsigma2 = 1\nrho = 0\nqb = 1\nqa = 1\n")
    assert main(["diffusion", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "diffusion.json").read_text())
    assert abs(res["p_decrease"] - 0.5) < 1e-9


def test_diffusion_from_flow_with_fluid_variance(tmp_path):
    cfg = write(tmp_path, "[diffusion]\narrival = poisson\nrate = 1\n"
                          "vbar = 1, 0.6, 0.8, 1, 0.7, 0.8\nqb = 100\nqa = 100\nz = 100\n")
    assert main(["diffusion", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "diffusion.json").read_text())
    assert len(res["sigmaY2"]) == 10 and res["sigmaY2"][0][1] == 0.0


def test_hitting_command(tmp_path):
    cfg = write(tmp_path, "[hitting]\nmu = 0, 0\nsigma1 = 1\nsigma2 = 1\nrho = 0\nqb = 1\nqa = 1\n"
                          "paths = 2000\n")
    assert main(["hitting", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "hitting_hitting_probability.json").exists()


def test_ldp_command(tmp_path):
    cfg = write(tmp_path, "[ldp]\nlam = 1\nsizes = 1, 1, 1, 1, 1, 1\n"
                          "x = 0.1667, 0.1667, 0.1667, 0.1667, 0.1667, 0.1667\n"
                          "slopes = -0.5, 0.2\nqb = 1\nqa = 1\ntimes = 0.5\n")
    assert main(["ldp", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "ldp.json").read_text())
    assert res["points"][0]["lambda_value"] < 1e-6
    assert res["segments"][0]["duality_gap"] < 1e-8
    assert len(res["tail_exponents"]) == 1


def test_ldp_rejects_ragged_points(tmp_path):
    cfg = write(tmp_path, "[ldp]\nx = 1, 2, 3\n")
    assert main(["ldp", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_verify_unknown_suite(tmp_path):
    assert main(["verify", "--suite", "nope", "--out", str(tmp_path / "o")]) == 2


def test_verify_quick_suite_passes(tmp_path):
    out = tmp_path / "o"
    assert main(["verify", "--suite", "quick", "--out", str(out)]) == 0
    summary = json.loads((out / "verify_summary.json").read_text())
    assert summary["passed"] and summary["failed"] == 0


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, REFERENCE_REGIME_FLUID)
    res = subprocess.run([sys.executable, "-m", "orderpos.cli", "fluid", "--config", cfg,
                          "--out", str(tmp_path / "o")], capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    assert "tau_z=100" in res.stdout
