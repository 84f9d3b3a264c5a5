"""Acceptance criteria at their stated tolerances, one summary line per criterion.

Each test records its measured values through ``conftest.record``; the terminal
summary prints ``criterion N PASS/FAIL`` after the run.  Parts that do not hold
are strict xfails and print as FAIL.
"""

import filecmp
import json
import os
import shutil

import numpy as np
import pytest
from conftest import record

from nlslab import config as cfgmod
from nlslab.analysis import check_dispersion, check_gn, fit_decay, log_slope, theorem_decay_report
from nlslab.cli import run as cli_run
from nlslab.duhamel import source_term_ibp
from nlslab.evolution import _advance, evolve
from nlslab.profiles import DiracTrain, canonical_profiles, dirac_wave_field, extract_modes
from nlslab.spectral import (
    free_propagate,
    l2_norm,
    make_grid,
    random_packets,
    spatial_derivative,
    to_fourier,
)
from nlslab.transforms import commutation_defect, pseudo_conformal, small_time_limit_defect

pytestmark = pytest.mark.slow


def test_criterion_01_spectral_substrate():
    rng = np.random.default_rng(2024)
    g = make_grid(4096, 4)
    worst = dict.fromkeys(["unitarity", "group_law", "plancherel", "commutation"], 0.0)
    for _ in range(100):
        f = random_packets(g, rng)
        nf = l2_norm(f)
        t, s = rng.uniform(-20, 20, size=2)
        worst["unitarity"] = max(worst["unitarity"], abs(l2_norm(free_propagate(f, t)) - nf) / nf)
        lhs = free_propagate(free_propagate(f, s), t)
        worst["group_law"] = max(worst["group_law"], l2_norm(lhs - free_propagate(f, s + t)) / nf)
        spectral = np.sqrt(np.sum(np.abs(f.fourier()) ** 2) / g.L)
        worst["plancherel"] = max(worst["plancherel"], abs(spectral - nf) / nf)
        fh = to_fourier(f)
        for k in (1, 2):
            a = spatial_derivative(free_propagate(fh, t), k)
            b = free_propagate(spatial_derivative(fh, k), t)
            worst["commutation"] = max(worst["commutation"], l2_norm(a - b) / l2_norm(b))
    ok = all(v <= 1e-12 for v in worst.values())
    record(1, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-12, 100 fields)")
    assert ok


def test_criterion_02_single_mode_and_strang_order():
    train = DiracTrain({1: 0.3 * np.exp(0.2j)}, kappa=0.5)
    g = make_grid(64, 1)
    run = evolve(dirac_wave_field(train, 10.0, g), 10.0, 1000.0, train.M, monitor_modes=[1])
    err = max(l2_norm(run.field(i) - dirac_wave_field(train, t, g)) for i, t in enumerate(run.times))

    # self-convergence on a datum whose kinetic and nonlinear parts do not commute
    gd = make_grid(4096, 4)
    datum = 0.3 + np.exp(-((gd.x / 2) ** 2) + 0.5j * gd.x)
    runs = [_advance(gd, datum, 1.0, 3.0, steps, 0.09, 1) for steps in (20, 40, 80)]
    order = float(np.log2(np.linalg.norm(runs[0] - runs[1]) / np.linalg.norm(runs[1] - runs[2])))
    ok = err <= 1e-6 and abs(order - 2.0) <= 0.1
    record(2, ok, f"single-mode L2 error {err:.1e} over [10, 1000] (tol 1e-6), Strang order {order:.3f}")
    assert ok


def test_criterion_03_dispersion():
    margins = [m for prof in canonical_profiles() for m in check_dispersion(prof, [1.0, 10.0, 100.0])]
    worst = min(m.sharp_margin for m in margins)
    ok = len(margins) == 15 and worst >= 0
    record(3, ok, f"min sharp margin {worst:.3e} over 5 profiles x t in (1, 10, 100)")
    assert ok


def test_criterion_04_gagliardo_nirenberg():
    rng = np.random.default_rng(7)
    g = make_grid(4096, 4)
    margins = check_gn([random_packets(g, rng, mean_zero=True) for _ in range(100)])
    ok = margins.min() >= -1e-10
    record(4, ok, f"min margin {margins.min():.3e} on 100 mean-zero fields (tol -1e-10)")
    assert ok


BANDS = {"Ja": (-1.1, -0.9), "Jc": (-1.1, -0.85), "Jd": (-0.6, -0.45), "Je": (-1.1, -0.9)}


def test_criterion_05_source_rates(experiment):
    S = experiment.sources
    g = experiment.grid
    parts, ok = [], True
    for name, (lo, hi) in BANDS.items():
        norms = np.sqrt(g.dx * np.sum(np.abs(S.fields[name]) ** 2, axis=-1))
        p = fit_decay(experiment.times, norms, experiment.window).exponent
        ok &= lo <= p <= hi
        parts.append(f"{name} {p:+.3f}")
    worst = 0.0
    for i in (0, int(np.searchsorted(experiment.times, experiment.window[0]))):
        direct = S.field_at("Ja", i)
        ibp = source_term_ibp(experiment.spec, "Ja", float(experiment.times[i]), g)
        worst = max(worst, l2_norm(ibp - direct) / l2_norm(direct))
    ok &= worst <= 1e-5
    record(5, ok, ", ".join(parts) + f"; Ja direct vs IBP {worst:.1e} (tol 1e-5)")
    assert ok


def test_criterion_06_contraction(experiment, default_config):
    rep = experiment.picard
    ratios = rep.ratios[1:]
    upd = rep.update_norms
    ok = (rep.converged and rep.iterations <= default_config.picard.max_iter and upd[-1] < 1e-8
          and all(r < 1 for r in ratios) and all(b < a for a, b in zip(upd, upd[1:])))
    record(6, ok, f"{rep.iterations} iterations, updates {', '.join(f'{u:.2e}' for u in upd)}, "
                  f"max ratio {max(ratios):.1e}")
    assert ok


def test_criterion_07_picard_decay(experiment):
    v1 = experiment.v1
    rep = theorem_decay_report(experiment.grid, experiment.times, v1 + experiment.picard.r_values, v1,
                               experiment.train.M, experiment.train.sign, ks=(0,), window=experiment.window)
    nls, tr = rep.nls_fits[0].exponent, rep.transformed_fits[0].exponent
    ok = nls <= -0.45 and tr >= 0.45
    record(7, ok, f"Picard fixed point {nls:+.3f}, transformed small-time {tr:+.3f}")
    assert ok


def test_criterion_07_final_state_solve(experiment):
    run = experiment.final_state
    assert np.allclose(run.times, experiment.times, rtol=1e-14)
    diff = run.values - experiment.v1
    norms = np.sqrt(experiment.grid.dx * np.sum(np.abs(diff) ** 2, axis=-1))
    p = fit_decay(run.times, norms, experiment.window).exponent
    gap = np.max(np.sqrt(experiment.grid.dx * np.sum(np.abs(diff - experiment.picard.r_values) ** 2, axis=-1)))
    ok = p <= -0.45
    record(7, ok, f"direct solve from v1(T) {p:+.3f} (agrees with Picard to {gap:.1e})")
    assert ok


@pytest.mark.xfail(strict=True, reason="forward solve from v1(t0) does not converge to v1: fitted exponent > 0")
def test_criterion_07_forward_solve_from_t0(experiment):
    run = experiment.forward
    v1 = experiment.v1
    norms = np.sqrt(experiment.grid.dx * np.sum(np.abs(run.values - v1) ** 2, axis=-1))
    p = fit_decay(run.times, norms, experiment.window).exponent
    ok = p <= -0.45
    record(7, ok, f"direct solve from v1(t0) {p:+.3f}")
    assert ok


def test_criterion_08_transform_identities(default_config):
    rng = np.random.default_rng(11)
    g = make_grid(4096, 16)
    comm = {1: 0.0, 2: 0.0}
    inv = iso = 0.0
    for _ in range(20):
        f = random_packets(g, rng, spread=5.0)
        nf = l2_norm(f)
        for t in (0.5, 1.0, 2.0, 5.0):
            for k in (1, 2):
                comm[k] = max(comm[k], commutation_defect(f, t, k))
            h = pseudo_conformal(f, t, g)
            inv = max(inv, l2_norm(pseudo_conformal(h, 1 / t, g) - f) / nf)
            iso = max(iso, abs(l2_norm(h) - nf) / nf)
    profile = default_config.make_profile()
    times = sorted(default_config.analysis.small_times, reverse=True)
    slopes = {k: log_slope(times, [small_time_limit_defect(profile, t, k) for t in times]) for k in (0, 1)}
    ok = max(comm.values()) < 1e-6 and inv <= 1e-9 and iso <= 1e-9 and min(slopes.values()) >= 0.9
    record(8, ok, f"commutation k1 {comm[1]:.1e} k2 {comm[2]:.1e}, involution {inv:.1e}, isometry {iso:.1e}, "
                  f"small-time slopes k0 {slopes[0]:.3f} k1 {slopes[1]:.3f} on t in [{times[-1]:g}, {times[0]:g}]")
    assert ok


def _pure_train_traces(cfg, start, end):
    t = cfg.times
    train = cfg.make_train()
    g = make_grid(64, 1)
    run = evolve(dirac_wave_field(train, start, g), start, end, train.M, train.sign, rho=t.rho,
                 substeps=t.substeps, h_max=t.h_max, monitor=False)
    return extract_modes(run.snapshots(), train)


def test_criterion_09_mode_extraction_anchored_at_T(default_config, experiment):
    traces = _pure_train_traces(default_config, default_config.times.t_end, default_config.times.t0)
    parts, ok = [], True
    for j, tr in traces.items():
        R = np.abs(tr.remainders)
        fit = fit_decay(tr.times, R, experiment.window)
        gamma = -fit.exponent
        bound = np.all(R[tr.times >= experiment.window[0]] <= 2 * fit.predict(tr.times[tr.times >= experiment.window[0]]))
        ok &= R[-1] < 1e-15 and gamma > 0 and bound
        parts.append(f"R_{j} gamma_fit {gamma:.3f}")
    record(9, ok, "pure train, R anchored at T: " + ", ".join(parts))
    assert ok


@pytest.mark.xfail(strict=True, reason="anchored at t0 the remainders grow and saturate: gamma_fit < 0")
def test_criterion_09_mode_extraction_anchored_at_t0(default_config, experiment):
    traces = _pure_train_traces(default_config, default_config.times.t0, default_config.times.t_end)
    parts, ok = [], True
    for j, tr in traces.items():
        R = np.abs(tr.remainders)
        gamma = -fit_decay(tr.times, R, experiment.window).exponent
        ok &= R[0] < 1e-15 and gamma > 0
        parts.append(f"R_{j} gamma_fit {gamma:.3f}")
    record(9, ok, "pure train, R anchored at t0: " + ", ".join(parts))
    assert ok


QUICK = {
    "grid": {"n": 4096, "m": 128},
    "times": {"t0": 20.0, "t_end": 400.0},
    "picard": {"T_max_factor": 20.0},
    "analysis": {"random_fields": 10, "small_times": [1e-2, 5e-3], "dispersion_times": [1.0, 10.0]},
}


def test_criterion_10_determinism(tmp_path):
    path = tmp_path / "quick.json"
    path.write_text(json.dumps(QUICK))
    out = str(tmp_path / "out")
    first = str(tmp_path / "first")
    commands = ("selftest", "evolve", "sources", "picard")
    for attempt in range(2):
        for cmd in commands:
            assert cli_run([cmd, "--quiet", "--config", str(path), "--out", out]) == 0
        if attempt == 0:
            shutil.copytree(out, first)
            shutil.rmtree(out)
    outs = [first, out]
    compared, differing = 0, []
    for cmd in commands:
        a, b = (os.path.join(o, cmd) for o in outs)
        names = sorted(n for n in os.listdir(a) if n != "manifest.json")
        _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        compared += len(names)
        differing += mismatch + errors
    manifests = [json.load(open(os.path.join(o, "picard", "manifest.json"))) for o in outs]
    for m in manifests:
        m.pop("wall_time_s")
    ok = not differing and manifests[0] == manifests[1]
    record(10, ok, f"{compared} output files byte-identical across two runs of {', '.join(commands)}"
                   + (f"; differing: {differing}" if differing else ""))
    assert ok


def test_default_config_is_the_documented_one(default_config):
    assert cfgmod.dumps(default_config) == cfgmod.dumps(cfgmod.load(None))
    assert default_config.make_train().l2q_norm() == pytest.approx(0.1, rel=1e-14)
    assert default_config.times.t0 == 20.0 and default_config.picard.mu == 0.4
