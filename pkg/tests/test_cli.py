import json
import math
import subprocess
import sys

import pytest

from qfrank.cli import main
from qfrank.config import parse_config
from qfrank.errors import ConfigurationError

FRANK_CONFIG = """
[kernel]
g1.form = inverse-power
g1.coefficient = 1.0
g1.exponent = 6.0
g1.cutoff = 0.1
g2.form = inverse-power
g2.coefficient = 1.0
g2.exponent = 6.0
g2.cutoff = 0.1
g3.form = inverse-power
g3.coefficient = 1.0
g3.exponent = 6.0
g3.cutoff = 0.1

[boundary]
s_star = 1.0
"""

MINIMIZE_CONFIG = """
[kernel]
g1.form = table
g1.knots = 1.0:0.3, 2.0:0.3
g2.form = table
g2.knots = 1.0:0.3, 2.0:0.3
g3.form = table
g3.knots = 1.0:0.3, 2.0:0.3

[bulk]
k0 = 8.5

[grid]
N = 8

[boundary]
director = constant
axis = 0, 0, 1

[minimize]
epsilon = 3.2
mode = periodic
grad_tol = 1e-4
max_iters = 40
sphere_theta = 32
sphere_phi = 64
"""


class TestConfigParser:
    def test_round_trip(self):
        cfg = parse_config(FRANK_CONFIG)
        assert cfg.get("kernel", "g1.form") == "inverse-power"
        assert cfg.get("kernel", "g1.cutoff") == 0.1

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_config("[nonsense]\nx = 1\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_config("[kernel]\nwhatever = 1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_config("[grid]\nN = not-a-number\n")

    def test_comments_and_blanks(self):
        cfg = parse_config("# hi\n\n[grid]\nN = 16  # inline\n")
        assert cfg.get("grid", "N") == 16

    def test_key_outside_section_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_config("N = 16\n")


def run_cli(tmp_path, config_text, command, name="cfg", extra=()):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(config_text)
    out = tmp_path / f"out_{name}_{command}"
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


class TestFrankCommand:
    def test_outputs_and_field_names(self, tmp_path):
        code, out = run_cli(tmp_path, FRANK_CONFIG, "frank")
        assert code == 0
        moments = json.loads((out / "moments.json").read_text())
        assert set(moments) == {"G1_100", "G2_110", "G2_200", "G3_111",
                                "G3_210", "G3_300", "k0"}
        frank = json.loads((out / "frank.json").read_text())
        assert set(frank) == {"L1", "L2", "L3", "K1", "K2", "K3"}
        assert frank["K3"] == frank["K1"]
        table = (out / "frank_table.txt").read_text()
        assert "ratio |K1-K2|/K1 = 0.2000" in table
        assert "MATCH" in table
        assert "fourth-moment integral without the 2/3 factor" in table

    def test_reruns_byte_identical(self, tmp_path):
        _, out1 = run_cli(tmp_path, FRANK_CONFIG, "frank", name="a")
        _, out2 = run_cli(tmp_path, FRANK_CONFIG, "frank", name="b")
        for f1 in sorted(out1.iterdir()):
            if f1.name == "run_meta.json":
                continue
            f2 = out2 / f1.name
            assert f1.read_bytes() == f2.read_bytes(), f1.name

    def test_one_constant_flag(self, tmp_path):
        cfg = FRANK_CONFIG.replace(
            "g2.form = inverse-power", "g2.form = zero").replace(
            "g3.form = inverse-power", "g3.form = zero")
        code, out = run_cli(tmp_path, cfg, "frank")
        assert code == 0
        assert "one-constant case" in (out / "frank_table.txt").read_text()


class TestValidateCommand:
    def test_good_kernel_passes(self, tmp_path):
        code, out = run_cli(tmp_path, FRANK_CONFIG, "validate")
        assert code == 0
        rep = json.loads((out / "validate.json").read_text())
        assert rep["passed"] is True
        assert rep["decay_exponent"] == pytest.approx(6.0, rel=1e-5)

    def test_indefinite_kernel_exits_2(self, tmp_path):
        cfg = FRANK_CONFIG.replace("g2.coefficient = 1.0",
                                   "g2.coefficient = -5.0").replace(
            "g3.form = inverse-power", "g3.form = zero")
        code, out = run_cli(tmp_path, cfg, "validate")
        assert code == 2
        rep = json.loads((out / "validate.json").read_text())
        assert rep["nonnegative"] is False

    def test_missing_config_exits_2(self, tmp_path):
        code = main(["validate", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "o")])
        assert code == 2


class TestBulkPsiCommands:
    def test_bulk_zero_coupling(self, tmp_path):
        cfg = FRANK_CONFIG + "\n[bulk]\nk0 = 0.0\n"
        code, out = run_cli(tmp_path, cfg, "bulk")
        assert code == 0
        bulk = json.loads((out / "bulk.json").read_text())
        assert bulk["s_star"] == 0.0
        assert bulk["branch"] == "isotropic"
        assert bulk["c5"] == pytest.approx(-math.log(4 * math.pi), abs=1e-9)

    def test_psi_csv_columns(self, tmp_path):
        cfg = FRANK_CONFIG + "\n[bulk]\nk0 = 8.0\n[psi]\nsamples = 12\n"
        code, out = run_cli(tmp_path, cfg, "psi")
        assert code == 0
        lines = (out / "psi.csv").read_text().splitlines()
        assert lines[0] == "s,psi_s,psi,lambda_norm"
        assert len(lines) == 13


class TestMinimizeCommand:
    def test_periodic_smoke(self, tmp_path):
        code, out = run_cli(tmp_path, MINIMIZE_CONFIG, "minimize")
        assert code == 0
        energy = json.loads((out / "energy.json").read_text())
        assert energy["converged"] is True
        assert abs(energy["energy"]) < 1e-6
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0] == "iter,energy,grad_norm,step"
        assert (out / "field.bin").exists()
        assert (out / "field.bin.json").exists()


class TestEstatCommand:
    def test_smoke(self, tmp_path):
        cfg = MINIMIZE_CONFIG + """
[domain]
geometry = box
lo = 1.5707963267948966, 1.5707963267948966, 1.5707963267948966
hi = 4.71238898038469, 4.71238898038469, 4.71238898038469
alpha = 0.25
c6 = 0.5

[electrostatics]
A_iso = 1.0
A_aniso = 0.0
phi0 = linear-x
"""
        cfg = cfg.replace("N = 8", "N = 16").replace("epsilon = 3.2",
                                                     "epsilon = 1.6")
        code, out = run_cli(tmp_path, cfg, "estat")
        assert code == 0
        res = json.loads((out / "estat.json").read_text())
        assert res["residual"] < 1e-10
        vol = res["E_value"]
        assert vol < 0

    def test_entry_point_subprocess(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(FRANK_CONFIG)
        out = tmp_path / "sub"
        proc = subprocess.run(
            [sys.executable, "-m", "qfrank.cli", "bulk", "--config", str(cfg),
             "--out", str(out), "--threads", "1", "--seed", "3"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (out / "bulk.json").exists()
        meta = json.loads((out / "run_meta.json").read_text())
        assert meta["seed"] == 3
