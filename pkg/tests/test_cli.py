import json
import subprocess
import sys

import numpy as np
import pytest

from stopgo.cli import main
from stopgo.energy import PolyEnergyModel, default_portfolio, design_matrix
from stopgo.kpi import KpiReport, compute_kpis
from stopgo.sim import TrajectoryLog, load_config, run
from stopgo.suite import load_suite

RING = """
seed = 3
warmup = 20.0
horizon = 60.0

[geometry]
type = "ring"
length = 242.0
n_vehicles = 22
"""

SUITE = """
seed = 5

[scenario]
warmup = 60.0
horizon = 60.0

[scenario.geometry]
type = "stretch"

[sweep]
controllers = ["idm_relaxation"]
v_desired = ["baseline"]
gamma = [0.5]
penetration = [0.1]
"""


@pytest.fixture
def ring_file(tmp_path):
    p = tmp_path / "ring.toml"
    p.write_text(RING)
    return p


def cli(*argv):
    return main([str(a) for a in argv])


class TestRun:
    def test_ok_and_artifacts(self, ring_file, tmp_path, capsys):
        out = tmp_path / "o"
        assert cli("run", ring_file, "--out", out) == 0
        for name in ("trajectory.csv", "kpi.json", "tsd.csv", "tsd.json"):
            assert (out / name).is_file()
        assert "system_mpg" in capsys.readouterr().out

    def test_quiet(self, ring_file, tmp_path, capsys):
        assert cli("run", ring_file, "--out", tmp_path / "o", "--quiet") == 0
        assert capsys.readouterr().out == ""

    def test_kpis_recomputable_from_csv(self, ring_file, tmp_path):
        out = tmp_path / "o"
        cli("run", ring_file, "--out", out, "--quiet")
        cfg = load_config(ring_file)
        meta = run(cfg).log.meta
        log = TrajectoryLog.from_csv(out / "trajectory.csv", meta=meta)
        assert compute_kpis(log, default_portfolio()).to_json() == (out / "kpi.json").read_text()

    def test_seed_override(self, ring_file, tmp_path):
        cli("run", ring_file, "--out", tmp_path / "a", "--quiet", "--seed", "1")
        cli("run", ring_file, "--out", tmp_path / "b", "--quiet", "--seed", "2")
        cli("run", ring_file, "--out", tmp_path / "c", "--quiet", "--seed", "1")
        a, b, c = ((tmp_path / d / "trajectory.csv").read_bytes() for d in "abc")
        assert a == c and a != b

    def test_dt_zero(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text(RING.replace("warmup = 20.0", "dt = 0\nwarmup = 20.0"))
        assert cli("run", p, "--out", tmp_path / "o") == 2
        assert "dt" in capsys.readouterr().err

    def test_parse_error(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("this is = = not toml")
        assert cli("run", p, "--out", tmp_path / "o") == 2

    def test_collision(self, tmp_path):
        p = tmp_path / "crash.toml"
        p.write_text(RING.replace("seed = 3", "seed = 3\nfail_safes = false\nnoise_std = 3.0")
                     .replace("horizon = 60.0", "horizon = 200.0"))
        out = tmp_path / "o"
        assert cli("run", p, "--out", out, "--quiet") == 3
        assert (out / "trajectory.csv").stat().st_size > 0
        assert json.loads((out / "kpi.json").read_text())["collision_count"] > 0

    def test_missing_file(self, tmp_path):
        assert cli("run", tmp_path / "nope.toml", "--out", tmp_path / "o") == 4

    def test_unwritable_out(self, ring_file, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli("run", ring_file, "--out", blocker / "sub") == 4

    def test_baseline_flags(self, ring_file, tmp_path):
        base = tmp_path / "base.json"
        base.write_text(KpiReport(30.0, 1000.0, 1e6, 0).to_json())
        cli("run", ring_file, "--out", tmp_path / "o", "--quiet", "--baseline", base)
        flags = json.loads((tmp_path / "o" / "kpi.json").read_text())["flags"]
        assert flags == {"inflow_degraded": True, "speed_degraded": True}


class TestSweep:
    def test_table_and_determinism(self, tmp_path):
        suite = tmp_path / "suite.toml"
        suite.write_text(SUITE)
        assert cli("sweep", suite, "--out", tmp_path / "a", "--quiet") == 0
        assert cli("sweep", suite, "--out", tmp_path / "b", "--quiet", "--jobs", "2") == 0
        a = (tmp_path / "a" / "leaderboard.json").read_bytes()
        assert a == (tmp_path / "b" / "leaderboard.json").read_bytes()
        rows = json.loads(a)
        assert sorted(r["label"] for r in rows) == ["baseline", "idmr_vbase_g0.5_p0.1"]
        assert (tmp_path / "a" / "runs" / "idmr_vbase_g0.5_p0.1.json").is_file()
        assert (tmp_path / "a" / "leaderboard.txt").read_text().startswith("rank")

    def test_seed_mandatory(self, tmp_path):
        suite = tmp_path / "suite.toml"
        suite.write_text(SUITE.replace("seed = 5", ""))
        assert cli("sweep", suite, "--out", tmp_path / "a") == 2
        assert load_suite(suite, seed_override=1).template.seed == 1

    def test_empty_axis(self, tmp_path):
        suite = tmp_path / "suite.toml"
        suite.write_text(SUITE.replace("gamma = [0.5]", "gamma = []"))
        assert cli("sweep", suite, "--out", tmp_path / "a") == 2

    def test_labels(self, tmp_path):
        suite = tmp_path / "suite.toml"
        suite.write_text(SUITE.replace('controllers = ["idm_relaxation"]',
                                       'controllers = ["idm_relaxation", "follower_stopper"]')
                         .replace('v_desired = ["baseline"]', "v_desired = [3, 5]")
                         .replace("gamma = [0.5]", "gamma = [0.5, 1.0]"))
        labels = [lbl for lbl, _ in load_suite(suite).runs(6.0)]
        assert labels == ["idmr_v3_g0.5_p0.1", "idmr_v3_g1_p0.1", "idmr_v5_g0.5_p0.1", "idmr_v5_g1_p0.1",
                          "fs_v3_p0.1", "fs_v5_p0.1"]


class TestStability:
    def test_default_band(self, tmp_path, capsys):
        assert cli("stability", "--out", tmp_path) == 0
        out = capsys.readouterr().out
        assert "unstable band: speed 2-16.5 m/s" in out
        lines = (tmp_path / "fd_scan.csv").read_text().splitlines()
        assert lines[0] == "density_veh_km,flow_veh_hr,speed_m_s,stable"
        assert len(lines) == 60
        assert (tmp_path / "lambda_table.csv").is_file()

    def test_large_headway(self, tmp_path, capsys):
        assert cli("stability", "--T", "10", "--out", tmp_path) == 0
        assert "no unstable band" in capsys.readouterr().out

    def test_params_file(self, tmp_path, capsys):
        p = tmp_path / "idm.toml"
        p.write_text("[idm]\nT = 10.0\n")
        assert cli("stability", p, "--out", tmp_path) == 0
        assert "no unstable band" in capsys.readouterr().out

    @pytest.mark.parametrize("text", ["a = 'x'", "zeta = 1.0", "a = -1.0", "[[["])
    def test_malformed(self, tmp_path, text):
        p = tmp_path / "idm.toml"
        p.write_text(text)
        assert cli("stability", p, "--out", tmp_path) == 2


class TestFit:
    COEF = (1.0, 0.02, 0.003, 4e-5, 0.2, 0.01, 1e-4, 0.05, 0.002)

    def samples(self, path):
        v, a = np.meshgrid(np.linspace(0, 30, 20), np.linspace(-3, 3, 20))
        v, a = v.ravel(), a.ravel()
        rate = design_matrix(v, a) @ np.array(self.COEF)
        rows = zip(v.tolist(), a.tolist(), rate.tolist())
        path.write_text("v,a,rate\n" + "".join(f"{x!r},{y!r},{z!r}\n" for x, y, z in rows))

    def test_round_trip(self, tmp_path):
        s = tmp_path / "s.csv"
        self.samples(s)
        assert cli("fit", s, "--beta", "0", "-o", tmp_path / "m.json", "--quiet") == 0
        m = PolyEnergyModel.load(tmp_path / "m.json")
        assert m.coefficients == pytest.approx(self.COEF, rel=1e-6)

    def test_empty(self, tmp_path):
        s = tmp_path / "s.csv"
        s.write_text("")
        assert cli("fit", s, "--beta", "0", "--out", tmp_path) == 2
        s.write_text("v,a,rate\n")
        assert cli("fit", s, "--beta", "0", "--out", tmp_path) == 2

    def test_negative_rate_names_row(self, tmp_path, capsys):
        s = tmp_path / "s.csv"
        s.write_text("v,a,rate\n1,0,0.5\n2,0,-0.1\n")
        assert cli("fit", s, "--beta", "0", "--out", tmp_path) == 2
        assert "row 3" in capsys.readouterr().err

    def test_rank_warning_to_stderr(self, tmp_path, capsys):
        s = tmp_path / "s.csv"
        s.write_text("v,a,rate\n" + "".join(f"10,0,{1 + 0.01 * i}\n" for i in range(12)))
        assert cli("fit", s, "--beta", "0", "--out", tmp_path, "--quiet") == 0
        assert "rank" in capsys.readouterr().err


class TestReport:
    def test_ranks_files(self, tmp_path, capsys):
        for name, mpg in (("a", 20.0), ("b", 25.0)):
            (tmp_path / name).mkdir()
            (tmp_path / name / "kpi.json").write_text(KpiReport(mpg, 5.0, 1800.0, 0).to_json())
        base = tmp_path / "base.json"
        base.write_text(KpiReport(10.0, 6.0, 1800.0, 0).to_json())
        assert cli("report", tmp_path / "a" / "kpi.json", tmp_path / "b" / "kpi.json", "--baseline", base,
                   "--out", tmp_path / "rep") == 0
        rows = json.loads((tmp_path / "rep" / "leaderboard.json").read_text())
        assert [r["label"] for r in rows] == ["b", "a", "baseline"]
        assert rows[0]["flags"]["speed_degraded"] is True

    def test_missing_report(self, tmp_path):
        assert cli("report", tmp_path / "none.json", "--out", tmp_path) == 4


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "stopgo.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("run", "sweep", "stability", "fit", "report"):
        assert cmd in out.stdout


def test_usage_error_exit_code():
    out = subprocess.run([sys.executable, "-m", "stopgo.cli", "run"], capture_output=True, text=True)
    assert out.returncode == 2
