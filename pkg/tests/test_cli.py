import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from gevrey_witness import cli


def run(args, capsys=None):
    code = cli.main(args)
    out = capsys.readouterr() if capsys else None
    return code, out


def test_spectrum_table(tmp_path, capsys):
    code, out = run(["spectrum", "--q", "2", "--k", "8", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "spectrum.csv")))
    mu = np.array([float(r["mu"]) for r in rows])
    np.testing.assert_allclose(mu, 2 * np.arange(9) + 1, atol=1e-8)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["schema_version"] == cli.SCHEMA_VERSION
    assert set(m["artifacts"]) == {"spectrum.csv", "eigenfunctions.bin", "eigenfunctions.json"}


def test_spectrum_rejects_q1(tmp_path, capsys):
    code, out = run(["spectrum", "--q", "1", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_CONFIG
    assert "q ≥ 2" in out.err


def test_spectrum_rerun_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["spectrum", "--q", "3", "--k", "6", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "spectrum.csv").read_bytes() == (tmp_path / "b" / "spectrum.csv").read_bytes()


@pytest.mark.parametrize("cfg,msg", [
    ({"q": 2, "a": 0}, "a ≥ 1"),
    ({"R0": -1.0}, "R0 > 0"),
    ({"kappa": 0.2}, "kappa in"),
    ({"delta": 1.5}, "delta in"),
    ({"grid": {"N": 100}}, "odd integer"),
    ({"grid": {"rho_max": 40.0}}, "rho_max"),
    ({"grid": {"h_rho": 0.5}}, "h_rho"),
    ({"tolerances": {"ode_residual": 0}}, "tolerances.ode_residual"),
    ({"bogus": 1}, "unknown config keys"),
])
def test_config_validation_names_constraint(tmp_path, capsys, cfg, msg):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(cfg))
    code, out = run(["witness", "--config", str(p), "--out", str(tmp_path / "o")], capsys)
    assert code == cli.EXIT_CONFIG
    assert msg in out.err


def test_eta_window_checked_before_analysis():
    c = cli.RunConfig(R0=3.0, J_transport=1, grid=cli.Grid(rho_max=60.0))
    c.validate("witness")
    with pytest.raises(cli.ConfigError, match="decades"):
        c.validate("analyze")


def test_malformed_config(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("q: [1, 2\n")
    code, out = run(["spectrum", "--config", str(p)], capsys)
    assert code == cli.EXIT_CONFIG and "malformed" in out.err


def test_witness_j0_only_u0(tmp_path):
    assert cli.main(["witness", "--j", "0", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.glob("u_*.csv")) == ["u_0.csv"]


def test_failure_injection_small_r0(tmp_path, capsys):
    code, out = run(["witness", "--r0", "0.1", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_TOLERANCE
    assert "raise R0" in out.err


def test_analyze_skip_numeric(tmp_path, capsys):
    code, out = run(["analyze", "--skip-numeric-ft", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "skipped" in out.out and "target 1/s0 = 0.5000" in out.out
    rows = list(csv.DictReader(open(tmp_path / "fourier_profile.csv")))
    assert {r["kind"] for r in rows} == {"closed"}
    fit = json.loads((tmp_path / "gevrey_fit.json").read_text())
    assert fit["slope"] == pytest.approx(0.5, abs=0.05)


def test_config_file_and_flag_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"q": 2, "a": 1, "K_modes": 16, "J_transport": 2, "output_dir": str(tmp_path / "x")}))
    assert cli.main(["witness", "--config", str(p), "--j", "1"]) == 0
    m = json.loads((tmp_path / "x" / "manifest.json").read_text())
    assert m["config"]["J_transport"] == 1 and m["config"]["K_modes"] == 16
    assert m["config"]["grid"]["h_rho"] == 0.02 and m["config"]["grid"]["N"] is not None


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gevrey_witness", "spectrum", "--q", "0", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "q ≥ 2" in r.stderr
