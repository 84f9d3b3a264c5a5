import filecmp
import json
import os
import subprocess
import sys

import pytest

from nlslab import config as cfgmod
from nlslab.cli import run
from nlslab.config import ConfigError

QUICK = {
    "grid": {"n": 4096, "m": 128},
    "times": {"t0": 20.0, "t_end": 400.0},
    "picard": {"T_max_factor": 20.0},
    "analysis": {"random_fields": 10, "small_times": [1e-2, 5e-3], "dispersion_times": [1.0, 10.0]},
}


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def merged(**sections):
    data = json.loads(json.dumps(QUICK))
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return data


def manifest(out, cmd):
    with open(os.path.join(out, cmd, "manifest.json")) as fh:
        return json.load(fh)


def summary(out, cmd):
    with open(os.path.join(out, cmd, "summary.json")) as fh:
        return json.load(fh)


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = cfgmod.load(None)
        again = cfgmod.loads(cfgmod.dumps(cfg))
        assert cfgmod.dumps(again) == cfgmod.dumps(cfg)
        assert cfg.make_train().l2q_norm() == pytest.approx(0.1, rel=1e-14)
        assert cfg.T_max == 2000.0

    def test_partial_override(self):
        cfg = cfgmod.from_dict({"grid": {"m": 256}})
        assert cfg.grid.m == 256 and cfg.grid.n == 16384

    def test_int_promoted_to_float(self):
        assert cfgmod.from_dict({"times": {"t0": 20}}).times.t0 == 20.0

    @pytest.mark.parametrize("data,match", [
        ({"grid": {"n": 1000}}, "power of two"),
        ({"grid": {"k": 1}}, "unknown key"),
        ({"colour": 1}, "unknown top-level"),
        ({"grid": {"n": True}}, "booleans"),
        ({"grid": {"n": 2.5}}, "integer"),
        ({"picard": {"mu": 0.5}}, "mu"),
        ({"train": {"sign": 0}}, "sign"),
        ({"train": {"alphas": [[1, 0.1, 0.0], [1, 0.1, 0.0]]}}, "twice"),
        ({"train": {"alphas": [[99999, 0.1, 0.0]]}}, "Nyquist"),
        ({"picard": {"T_max_factor": 12.0}}, "time lattice"),
        ({"analysis": {"small_times": [0.1]}}, "small_times"),
        ({"profile": {"width": 0.25}}, r"condition \(fracu\)"),
        ([], "JSON object"),
    ])
    def test_rejections(self, data, match):
        with pytest.raises(ConfigError, match=match):
            cfgmod.from_dict(data)

    def test_malformed_and_missing(self, tmp_path):
        with pytest.raises(ConfigError, match="malformed"):
            cfgmod.loads("{")
        with pytest.raises(ConfigError, match="cannot read"):
            cfgmod.load(str(tmp_path / "absent.json"))

    def test_fit_window(self, default_config, experiment):
        lo, hi = cfgmod.fit_window(default_config, experiment.times)
        # first lattice point at least one decade past the start
        assert lo == pytest.approx(20 * 2**0.5) and hi == pytest.approx(20 * 2 ** (31 / 8))


class TestCli:
    def test_print_config(self, capsys):
        assert run(["selftest", "--print-config"]) == 0
        assert capsys.readouterr().out == cfgmod.dumps(cfgmod.load(None))

    def test_fracu_violation_exits_one(self, tmp_path, capsys):
        path = write_config(tmp_path, merged(profile={"width": 0.25}))
        assert run(["sources", "--config", path, "--out", str(tmp_path / "o")]) == 1
        assert "condition (fracu)" in capsys.readouterr().err

    def test_bad_panels(self, tmp_path):
        assert run(["sources", "--panels", "2", "--out", str(tmp_path)]) == 1

    def test_selftest(self, tmp_path):
        out = str(tmp_path / "o")
        assert run(["selftest", "--quiet", "--config", write_config(tmp_path, QUICK), "--out", out]) == 0
        assert summary(out, "selftest")["failed"] == []
        with open(os.path.join(out, "selftest", "selftest.csv")) as fh:
            assert fh.readline().strip() == "check,value,tolerance,passed"

    def test_sources_deterministic_and_manifest(self, tmp_path):
        path = write_config(tmp_path, QUICK)
        outs = [str(tmp_path / f"o{i}") for i in range(2)]
        for out in outs:
            assert run(["sources", "--quiet", "--config", path, "--out", out]) == 0
        files = sorted(os.listdir(os.path.join(outs[0], "sources")))
        assert {"sources.csv", "sources_fits.csv", "ibp.csv", "summary.json", "manifest.json"} <= set(files)
        same = [f for f in files if f != "manifest.json"]
        match, mismatch, errors = filecmp.cmpfiles(*(os.path.join(o, "sources") for o in outs), same, shallow=False)
        assert mismatch == [] and errors == []
        m = manifest(outs[0], "sources")
        assert m["exit_code"] == 0 and m["config"]["grid"] == {"n": 4096, "m": 128}
        assert m["flags"] == {"dump": False, "panels": None}
        assert {"version", "python", "numpy", "wall_time_s"} <= set(m)

    def test_trivial_picard(self, tmp_path):
        data = merged(train={"alphas": [[0, 0.0, 0.0]]}, profile={"amplitude": 0.0})
        out = str(tmp_path / "o")
        assert run(["picard", "--quiet", "--config", write_config(tmp_path, data), "--out", out]) == 0
        s = summary(out, "picard")
        assert s["iterations"] == 1 and s["converged"] and s["exact_match"]
        assert s["update_norms"] == [0.0]
        with open(os.path.join(out, "picard", "picard_fits.csv")) as fh:
            assert "exact_match" in fh.read()

    def test_picard_smallness_gate(self, tmp_path):
        data = merged(train={"alphas": [[-1, 0.2, 0.0], [1, 0.2, 0.0]]})
        out = str(tmp_path / "o")
        assert run(["picard", "--quiet", "--config", write_config(tmp_path, data), "--out", out]) == 1
        assert "smallness" in manifest(out, "picard")["message"]

    def test_numerical_failure_exits_two(self, tmp_path):
        # a box too small for the outgoing profile trips the edge-mass monitor
        data = merged(grid={"n": 4096, "m": 64})
        out = str(tmp_path / "o")
        assert run(["evolve", "--quiet", "--config", write_config(tmp_path, data), "--out", out]) == 2
        m = manifest(out, "evolve")
        assert m["exit_code"] == 2 and "BoundaryMassError" in m["message"]

    def test_evolve_dump_and_report(self, tmp_path):
        path = write_config(tmp_path, QUICK)
        out = str(tmp_path / "o")
        assert run(["evolve", "--quiet", "--dump", "--config", path, "--out", out]) == 0
        names = os.listdir(os.path.join(out, "evolve"))
        assert {"evolve_decay.csv", "evolve_transformed.csv", "modes.csv", "evolve_fits.csv"} <= set(names)
        dumped = os.listdir(os.path.join(out, "evolve", "snapshots"))
        assert any(n.startswith("forward_") for n in dumped) and any(n.startswith("final_") for n in dumped)
        assert run(["report", "--quiet", "--config", path, "--out", out]) == 0
        rep = json.load(open(os.path.join(out, "report", "report.json")))
        assert set(rep) == {"evolve"}
        assert summary(out, "report") == {"experiments": ["evolve"]}

    def test_report_without_summaries(self, tmp_path):
        assert run(["report", "--quiet", "--out", str(tmp_path / "empty")]) == 1

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "nlslab.cli", "selftest", "--print-config"],
                              capture_output=True, text=True, env={**os.environ, "NLSLAB_THREADS": "2"})
        assert proc.returncode == 0 and json.loads(proc.stdout)["grid"]["n"] == 16384
        proc = subprocess.run([sys.executable, "-m", "nlslab.cli", "nonsense"], capture_output=True, text=True)
        assert proc.returncode == 2 and "invalid choice" in proc.stderr
