"""Command-line driver.

Every subcommand reads one JSON config (defaults when ``--config`` is absent),
writes its results into ``<out>/<subcommand>/`` and finishes with a
``manifest.json`` (config echo, code version, wall time) next to a
deterministic ``summary.json``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 failed self-test check.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from . import config as cfgmod
from .analysis import (
    check_dispersion,
    check_gn,
    fit_decay,
    log_slope,
    theorem_decay_report,
    write_csv,
    write_decay_csv,
    write_fit_summary,
)
from .config import ConfigError, ExperimentConfig
from .duhamel import (
    PicardDivergence,
    QuadratureRefinementError,
    picard_solve,
    source_term_ibp,
    source_terms,
    stability_inclusion,
    v1_family,
)
from .evolution import NumericalError, cascade_modes, dump_snapshots, evolve, geometric_lattice, nls_residual
from .profiles import (
    DiracTrain,
    QuadratureError,
    canonical_profiles,
    dirac_wave_field,
    extract_modes,
    v1_field,
)
from .spectral import (
    BoundaryMassError,
    ComplexField,
    NyquistError,
    free_propagate,
    from_fourier,
    l2_norm,
    make_grid,
    random_packets,
    seminorms,
    spatial_derivative,
    to_fourier,
)
from .transforms import (
    EvaluationRangeError,
    commutation_defect,
    pseudo_conformal,
    small_time_limit_defect,
    wick_phase,
)

log = logging.getLogger("nlslab")

NUMERICAL_ERRORS = (
    NumericalError,
    QuadratureError,
    QuadratureRefinementError,
    BoundaryMassError,
    PicardDivergence,
    EvaluationRangeError,
    NyquistError,
    FloatingPointError,
)

# grids for the self-contained identity suites
SPECTRAL_SUITE_GRID = (4096, 4)
TRANSFORM_SUITE_GRID = (4096, 16)
TRANSFORM_SUITE_TIMES = (0.5, 1.0, 2.0, 5.0)
TRANSFORM_SUITE_FIELDS = 20


class SelfTestFailure(RuntimeError):
    pass


def _norms(grid, values, s):
    """``(len, s + 1)`` array of ``||d^k f||_2``."""
    return seminorms(grid, np.asarray(values), s)


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _maybe_fit(times, values, window):
    """Decay fit over ``window``, or ``None`` when the series vanishes there identically."""
    t = np.asarray(times, dtype=float)
    inside = (t >= window[0] * (1 - 1e-12)) & (t <= window[1] * (1 + 1e-12))
    if not np.any(np.asarray(values)[inside]):
        return None
    return fit_decay(t, values, window)


def _fit_dict(fit):
    if fit is None:
        return None
    return {"exponent": fit.exponent, "constant": fit.constant, "rms": fit.rms,
            "window": list(fit.window), "samples": fit.samples}


# ---------------------------------------------------------------------------
# selftest


def _selftest_checks(cfg: ExperimentConfig):
    rng = np.random.default_rng(cfg.seed)
    g = make_grid(*SPECTRAL_SUITE_GRID)
    fields = [random_packets(g, rng) for _ in range(cfg.analysis.random_fields)]
    worst = dict.fromkeys(["round_trip", "plancherel", "unitarity", "group_law", "commutation"], 0.0)
    for f in fields:
        nf = l2_norm(f)
        worst["round_trip"] = max(worst["round_trip"], l2_norm(from_fourier(to_fourier(f)) - f) / nf)
        spectral_norm = float(np.sqrt(np.sum(np.abs(f.fourier()) ** 2) / g.L))
        worst["plancherel"] = max(worst["plancherel"], abs(spectral_norm - nf) / nf)
        for t in (0.1, 1.0, 10.0, 100.0):
            worst["unitarity"] = max(worst["unitarity"], abs(l2_norm(free_propagate(f, t)) - nf) / nf)
        s, t = rng.uniform(-5, 5, size=2)
        lhs = free_propagate(free_propagate(f, s), t)
        worst["group_law"] = max(worst["group_law"], l2_norm(lhs - free_propagate(f, s + t)) / nf)
        # diagonal multipliers compared in frequency space, where no transform round-off
        # is amplified by the derivative weights
        fh = to_fourier(f)
        for k in (1, 2):
            a = spatial_derivative(free_propagate(fh, 1.7), k)
            b = free_propagate(spatial_derivative(fh, k), 1.7)
            worst["commutation"] = max(worst["commutation"], l2_norm(a - b) / l2_norm(b))
    checks = [(f"spectral_{name}", value, 1e-12) for name, value in worst.items()]

    gt = make_grid(*TRANSFORM_SUITE_GRID)
    inv = iso = 0.0
    comm = {1: 0.0, 2: 0.0}
    for _ in range(TRANSFORM_SUITE_FIELDS):
        f = random_packets(gt, rng, spread=5.0)
        nf = l2_norm(f)
        for t in TRANSFORM_SUITE_TIMES:
            h = pseudo_conformal(f, t, gt)
            inv = max(inv, l2_norm(pseudo_conformal(h, 1 / t, gt) - f) / nf)
            iso = max(iso, abs(l2_norm(h) - nf) / nf)
            for k in (1, 2):
                comm[k] = max(comm[k], commutation_defect(f, t, k))
    w = random_packets(gt, rng, spread=5.0)
    wick = l2_norm(wick_phase(wick_phase(w, 3.0, 0.7, 1), 3.0, 0.7, -1) - w) / l2_norm(w)
    checks += [
        ("transform_involution", inv, 1e-9),
        ("transform_isometry", iso, 1e-9),
        ("transform_commutation_k1", comm[1], 1e-7),
        ("transform_commutation_k2", comm[2], 1e-6),
        ("wick_round_trip", wick, 1e-15),
    ]

    # exact single mode through the direct solver
    alpha = 0.3
    train = DiracTrain({1: alpha}, sign=cfg.train.sign)
    gs = make_grid(64, 1)
    run = evolve(dirac_wave_field(train, 10.0, gs), 10.0, 1000.0, train.M, train.sign, h_max=0.1, monitor=False)
    err = max(
        l2_norm(run.field(i) - dirac_wave_field(train, t, gs)) / np.sqrt(gs.L) for i, t in enumerate(run.times)
    )
    checks.append(("single_mode_solver", err, 1e-6))
    return checks


def cmd_selftest(cfg, args, out):
    checks = _selftest_checks(cfg)
    write_csv(os.path.join(out, "selftest.csv"), ["check", "value", "tolerance", "passed"],
              [(name, value, tol, value <= tol) for name, value, tol in checks])
    failed = [name for name, value, tol in checks if not value <= tol]
    for name, value, tol in checks:
        log.info("%-28s %.3e (tol %.0e) %s", name, value, tol, "ok" if value <= tol else "FAIL")
    summary = {"checks": {name: value for name, value, _ in checks}, "failed": failed}
    if failed:
        raise SelfTestFailure(summary, f"self-test checks failed: {', '.join(failed)}")
    return summary


# ---------------------------------------------------------------------------
# evolve


def _difference_norms(grid, train, profile, run, s):
    v1 = np.array([v1_field(train, profile, t, grid).values for t in run.times])
    return v1, _norms(grid, run.values - v1, s)


def cmd_evolve(cfg, args, out):
    g, train, profile = cfg.make_grid(), cfg.make_train(), cfg.make_profile()
    t0, t_end, rho = cfg.times.t0, cfg.times.t_end, cfg.times.rho
    s = cfg.picard.s
    monitor = cascade_modes(train.modes) if not train.is_empty() else None
    opts = dict(rho=rho, substeps=cfg.times.substeps, h_max=cfg.times.h_max, monitor_modes=monitor)
    log.info("forward solve from v1(t0)")
    fwd = evolve(v1_field(train, profile, t0, g), t0, t_end, train.M, train.sign, **opts)
    log.info("final-state solve from v1(t_end)")
    fin = evolve(v1_field(train, profile, t_end, g), t_end, t0, train.M, train.sign, **opts)
    times = fin.times
    _, fwd_norms = _difference_norms(g, train, profile, fwd, s)
    v1, fin_norms = _difference_norms(g, train, profile, fin, s)
    residual = [nls_residual(fin, i) if 0 < i < len(fin) - 1 else float("nan") for i in range(len(fin))]
    series = {f"forward_k{k}": fwd_norms[:, k] for k in range(s + 1)}
    series.update({f"final_k{k}": fin_norms[:, k] for k in range(s + 1)})
    series["final_residual"] = residual
    write_decay_csv(os.path.join(out, "evolve_decay.csv"), times, series)

    window = cfgmod.fit_window(cfg, times)
    report = theorem_decay_report(g, times, fin.values, v1, train.M, train.sign, ks=range(s + 1), window=window)
    write_decay_csv(os.path.join(out, "evolve_transformed.csv"), report.transformed_times,
                    {f"final_k{k}": report.transformed_norms[k] for k in range(s + 1)})

    fits = {}
    for name in [f"forward_k{k}" for k in range(s + 1)] + [f"final_k{k}" for k in range(s + 1)]:
        vals = np.asarray(series[name])
        fits[name] = _maybe_fit(times, vals, window)
    for k in range(s + 1):
        fits[f"final_transformed_k{k}"] = report.transformed_fits[k]

    # pure train, final-state and forward, on the exact periodic cell
    mode_rows = []
    if not train.is_empty():
        jmax = max(abs(j) for j in cascade_modes(train.modes, 2))
        n = 64
        while n // 2 <= 2 * jmax:
            n *= 2
        gs = make_grid(n, 1)
        solves = {
            "final_state": evolve(dirac_wave_field(train, t_end, gs), t_end, t0, train.M, train.sign,
                                  rho=rho, substeps=cfg.times.substeps, h_max=cfg.times.h_max, monitor=False),
            "forward": evolve(dirac_wave_field(train, t0, gs), t0, t_end, train.M, train.sign,
                              rho=rho, substeps=cfg.times.substeps, h_max=cfg.times.h_max, monitor=False),
        }
        for label, run in solves.items():
            traces = extract_modes(run.snapshots(), train)
            for j, tr in traces.items():
                for t, a, r in zip(tr.times, tr.amplitudes, tr.remainders):
                    mode_rows.append([label, t, j, a.real, a.imag, abs(r)])
                if label == "final_state":
                    fits[f"R_{j}"] = _maybe_fit(tr.times, np.abs(tr.remainders), window)
    write_csv(os.path.join(out, "modes.csv"), ["run", "t", "j", "re_A", "im_A", "abs_R"], mode_rows)
    write_fit_summary(os.path.join(out, "evolve_fits.csv"), fits)

    if args.dump:
        dump_snapshots(fwd, os.path.join(out, "snapshots"), "forward")
        dump_snapshots(fin, os.path.join(out, "snapshots"), "final")
    return {
        "fits": {k: _fit_dict(v) for k, v in fits.items()},
        "max_boundary_mass": float(max(fwd.boundary_mass.max(), fin.boundary_mass.max())),
        "gamma_fit": {k[2:]: -v.exponent for k, v in fits.items() if k.startswith("R_") and v is not None},
    }


# ---------------------------------------------------------------------------
# sources


def _lattice(cfg):
    return geometric_lattice(cfg.times.t0, cfg.T_max, cfg.times.rho)


def cmd_sources(cfg, args, out):
    g = cfg.make_grid()
    spec = cfg.source_spec(args.panels)
    times = _lattice(cfg)
    s = cfg.picard.s
    log.info("source sweep on %d snapshots", times.size)
    S = source_terms(spec, times, g, check=True)
    series, fits = {}, {}
    window = cfgmod.fit_window(cfg, times)
    for name, values in S.fields.items():
        norms = _norms(g, values, s)
        for k in range(s + 1):
            key = f"{name}_k{k}"
            series[key] = norms[:, k]
            fits[key] = _maybe_fit(times, norms[:, k], window)
    write_decay_csv(os.path.join(out, "sources.csv"), times, series)
    write_fit_summary(os.path.join(out, "sources_fits.csv"), fits)

    rows, worst = [], 0.0
    check_times = sorted({float(times[0]), float(window[0])})
    for tag, key in (("Ja", "Ja"), ("Jc1", "Jc")):
        for i, t in enumerate(times):
            if float(t) not in check_times:
                continue
            direct = S.field_at(key, i)
            ibp = source_term_ibp(spec, tag, float(t), g)
            nd = l2_norm(direct)
            rel = l2_norm(ibp - direct) / nd if nd > 0 else l2_norm(ibp)
            worst = max(worst, rel) if tag == "Ja" else worst
            rows.append([t, tag, nd, l2_norm(ibp), rel])
    write_csv(os.path.join(out, "ibp.csv"), ["t", "tag", "direct_L2", "ibp_L2", "rel_diff"], rows)
    return {
        "fits": {k: _fit_dict(v) for k, v in fits.items()},
        "tail_bound": S.tail_bound,
        "refinement": S.refinement,
        "ja_ibp_rel_diff": worst,
    }


# ---------------------------------------------------------------------------
# picard


def cmd_picard(cfg, args, out):
    train = cfg.make_train()
    if train.l2q_norm() > cfg.train.max_norm:
        raise ConfigError(f"train norm {train.l2q_norm():.4g} exceeds the smallness threshold {cfg.train.max_norm}")
    if cfg.times.t0 < cfg.times.t0_floor:
        raise ConfigError(f"t0 = {cfg.times.t0} is below the configured floor {cfg.times.t0_floor}")
    g = cfg.make_grid()
    spec = cfg.source_spec(args.panels)
    weights = cfg.weights()
    times = _lattice(cfg)
    S = source_terms(spec, times, g, check=True)
    pc = cfg.picard
    rep = picard_solve(spec, g, times, weights, tol=pc.tol, max_iter=pc.max_iter, sources=S)
    rep.write_csv(os.path.join(out, "picard_report.csv"))
    if not rep.converged:
        raise PicardDivergence(f"no convergence to {pc.tol:g} in {pc.max_iter} iterations")

    v1 = v1_family(spec, g, times)
    s = pc.s
    window = cfgmod.fit_window(cfg, times)
    report = theorem_decay_report(g, times, v1 + rep.r_values, v1, train.M, train.sign, ks=range(s + 1),
                                  window=window)
    write_decay_csv(os.path.join(out, "picard_decay.csv"), times,
                    {f"k{k}": report.nls_norms[k] for k in range(s + 1)})
    write_decay_csv(os.path.join(out, "picard_transformed.csv"), report.transformed_times,
                    {f"k{k}": report.transformed_norms[k] for k in range(s + 1)})
    fits = {f"nls_k{k}": report.nls_fits[k] for k in range(s + 1)}
    fits.update({f"transformed_k{k}": report.transformed_fits[k] for k in range(s + 1)})
    write_fit_summary(os.path.join(out, "picard_fits.csv"), fits)

    inclusion = stability_inclusion(spec, g, times, weights, pc.delta, S, seed=cfg.seed)
    write_csv(os.path.join(out, "stability.csv"), ["sample", "input_S_norm", "image_S_norm", "inside"],
              [(i, a, b, b <= pc.delta) for i, (a, b) in enumerate(inclusion)])
    return {
        "iterations": rep.iterations,
        "update_norms": rep.update_norms,
        "ratios": [None if np.isnan(r) else r for r in rep.ratios],
        "converged": rep.converged,
        "exact_match": report.exact_match,
        "fits": {k: _fit_dict(v) for k, v in fits.items()},
        "stability_inside": all(b <= pc.delta for _, b in inclusion),
    }


# ---------------------------------------------------------------------------
# transforms


def cmd_transforms(cfg, args, out):
    rng = np.random.default_rng(cfg.seed)
    gt = make_grid(*TRANSFORM_SUITE_GRID)
    s = cfg.picard.s
    kmax = max(2, s)
    comm_rows, id_rows = [], []
    for i in range(TRANSFORM_SUITE_FIELDS):
        f = random_packets(gt, rng, spread=5.0)
        nf = l2_norm(f)
        for t in TRANSFORM_SUITE_TIMES:
            for k in range(kmax + 1):
                comm_rows.append([i, t, k, commutation_defect(f, t, k)])
            h = pseudo_conformal(f, t, gt)
            id_rows.append([i, t, l2_norm(pseudo_conformal(h, 1 / t, gt) - f) / nf, abs(l2_norm(h) - nf) / nf])
    write_csv(os.path.join(out, "commutation.csv"), ["field", "t", "k", "defect"], comm_rows)
    write_csv(os.path.join(out, "identities.csv"), ["field", "t", "involution", "isometry"], id_rows)

    profile = cfg.make_profile()
    small = sorted(cfg.analysis.small_times, reverse=True)
    rows, slopes = [], {}
    for k in range(s + 1):
        series = []
        for t in small:
            d = small_time_limit_defect(profile, t, k)
            d_real = d if k == 0 else small_time_limit_defect(profile, t, k, convention="real")
            rows.append([t, k, d, d_real])
            series.append(d)
        slopes[f"k{k}"] = log_slope(small, series) if all(v > 0 for v in series) else None
    write_csv(os.path.join(out, "small_time.csv"), ["t", "k", "defect_minus_i", "defect_real"], rows)
    return {
        "max_commutation_defect": {str(k): max(r[3] for r in comm_rows if r[2] == k) for k in range(kmax + 1)},
        "max_involution": max(r[2] for r in id_rows),
        "max_isometry": max(r[3] for r in id_rows),
        "small_time_slopes": slopes,
    }


# ---------------------------------------------------------------------------
# inequalities


def cmd_inequalities(cfg, args, out):
    rows = []
    for i, prof in enumerate(canonical_profiles()):
        for m in check_dispersion(prof, cfg.analysis.dispersion_times):
            rows.append([i, m.t, m.sup, m.l1, m.sharp_bound, m.unit_bound, m.sharp_margin, m.unit_margin])
    write_csv(os.path.join(out, "dispersion.csv"),
              ["profile", "t", "sup", "l1", "sharp_bound", "unit_bound", "sharp_margin", "unit_margin"], rows)
    rng = np.random.default_rng(cfg.seed)
    g = make_grid(*SPECTRAL_SUITE_GRID)
    fields = [random_packets(g, rng, mean_zero=True) for _ in range(cfg.analysis.random_fields)]
    margins = check_gn(fields)
    write_csv(os.path.join(out, "gn.csv"), ["field", "margin"], list(enumerate(margins)))
    return {
        "min_sharp_margin": min(r[6] for r in rows),
        "min_unit_margin": min(r[7] for r in rows),
        "min_gn_margin": float(margins.min()),
    }


# ---------------------------------------------------------------------------
# report


def cmd_report(cfg, args, out):
    root = os.path.dirname(out)
    merged = {}
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name, "summary.json")
        if name != "report" and os.path.isfile(path):
            with open(path) as fh:
                merged[name] = json.load(fh)
    if not merged:
        raise ConfigError(f"no experiment summaries found under {root}")
    _write_json(os.path.join(out, "report.json"), merged)

    rows = []

    def flatten(prefix, value):
        if isinstance(value, dict):
            for k in sorted(value):
                flatten(f"{prefix}.{k}" if prefix else str(k), value[k])
        elif isinstance(value, list):
            for i, v in enumerate(value):
                flatten(f"{prefix}[{i}]", v)
        else:
            rows.append([prefix, "" if value is None else value])

    flatten("", merged)
    write_csv(os.path.join(out, "report.csv"), ["key", "value"], rows)
    return {"experiments": sorted(merged)}


COMMANDS = {
    "selftest": cmd_selftest,
    "evolve": cmd_evolve,
    "sources": cmd_sources,
    "picard": cmd_picard,
    "transforms": cmd_transforms,
    "inequalities": cmd_inequalities,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlslab", description="Dirac-train NLS experiments")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", metavar="PATH", help="JSON configuration (defaults if omitted)")
    parser.add_argument("--out", metavar="DIR", help="output root (overrides the config)")
    parser.add_argument("--dump", action="store_true", help="write per-snapshot CSVs (evolve)")
    parser.add_argument("--panels", type=int, metavar="N", help="override quadrature panels per decade")
    parser.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")
    parser.add_argument("--print-config", action="store_true", help="print the canonical config and exit")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = cfgmod.load(args.config)
        if args.out:
            cfg.out = args.out
        if args.panels is not None and args.panels < 4:
            raise ConfigError("--panels must be at least 4")
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 1
    if args.print_config:
        sys.stdout.write(cfgmod.dumps(cfg))
        return 0

    out = os.path.join(cfg.out, args.command)
    os.makedirs(out, exist_ok=True)
    started = time.perf_counter()
    status, message, summary = 0, "ok", None
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            summary = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        status, message = 1, f"configuration error: {exc}"
    except SelfTestFailure as exc:
        summary, message = exc.args
        status = 3
    except NUMERICAL_ERRORS as exc:
        status, message = 2, f"numerical failure ({type(exc).__name__}): {exc}"
    if summary is not None:
        _write_json(os.path.join(out, "summary.json"), summary)
    _write_json(os.path.join(out, "manifest.json"), {
        "command": args.command,
        "config": cfgmod.to_dict(cfg),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": time.perf_counter() - started,
        "exit_code": status,
        "message": message,
        "flags": {"dump": args.dump, "panels": args.panels},
    })
    if status:
        log.error(message)
    else:
        log.info("%s finished; results in %s", args.command, out)
    return status


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
