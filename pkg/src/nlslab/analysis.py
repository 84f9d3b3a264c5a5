"""Power-law decay fits and the two pointwise inequalities used throughout the
fixed-point estimates: dispersion of the free group and Gagliardo-Nirenberg."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .profiles import ScatteringProfile, free_evolve_profile, profile_l1
from .spectral import ComplexField, check_boundary_mass, l2_norm, lebesgue_sup, spatial_derivative


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit ``value ~ constant * t**exponent`` in log-log coordinates."""

    exponent: float
    constant: float
    rms: float
    window: tuple[float, float]
    samples: int

    def predict(self, t):
        return self.constant * np.asarray(t, dtype=float) ** self.exponent


def fit_decay(times, values, window: tuple[float, float] | None = None, min_samples: int = 8,
              min_decades: float = 1.0) -> DecayFit:
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        keep = (t >= window[0] * (1 - 1e-12)) & (t <= window[1] * (1 + 1e-12))
        t, v = t[keep], v[keep]
    if t.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {t.size}")
    if np.any(v <= 0) or np.any(t <= 0):
        raise ValueError("decay fit needs strictly positive times and values")
    if np.log10(t.max() / t.min()) < min_decades - 1e-9:
        raise ValueError(f"samples must span at least {min_decades} decade(s)")
    lt, lv = np.log(t), np.log(v)
    A = np.vstack([lt, np.ones_like(lt)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, lv, rcond=None)
    resid = lv - (slope * lt + intercept)
    return DecayFit(float(slope), float(np.exp(intercept)), float(np.sqrt(np.mean(resid**2))),
                    (float(t.min()), float(t.max())), int(t.size))


@dataclass(frozen=True)
class DispersionMargin:
    t: float
    sup: float
    l1: float
    sharp_bound: float
    unit_bound: float

    @property
    def sharp_margin(self) -> float:
        return self.sharp_bound - self.sup

    @property
    def unit_margin(self) -> float:
        return self.unit_bound - self.sup


def _sup_on_window(profile: ScatteringProfile, t: float, halo: float, spacing: float) -> tuple[float, float]:
    a, b = profile.support
    lo, hi = 2 * t * min(a, b) - halo, 2 * t * max(a, b) + halo
    x = np.arange(lo, hi + spacing, spacing)
    vals = np.abs(free_evolve_profile(profile, t, x))
    i = int(np.argmax(vals))
    if i in (0, x.size - 1):
        raise ValueError(f"sup of |exp(it d_xx) u+| attained at window edge for t={t}; widen the window")
    # refine around the sampled maximum
    xf = np.linspace(x[i] - spacing, x[i] + spacing, 201)
    return float(np.max(np.abs(free_evolve_profile(profile, t, xf)))), float(x[i])


def check_dispersion(profile: ScatteringProfile, times, halo: float | None = None,
                     spacing: float = 0.25) -> list[DispersionMargin]:
    """Compare ``sup_x |exp(it d_xx) u+|`` with ``||u+||_1/sqrt(4 pi t)`` and ``||u+||_1/sqrt(t)``."""
    l1 = profile_l1(profile)
    if halo is None:
        halo = 80.0 / profile.width
    out = []
    for t in times:
        if not t > 0:
            raise ValueError("dispersion check needs t > 0")
        sup = 0.0 if profile.is_zero else _sup_on_window(profile, float(t), halo, spacing)[0]
        out.append(DispersionMargin(float(t), sup, l1, l1 / np.sqrt(4 * np.pi * t), l1 / np.sqrt(t)))
    return out


def check_gn(fields, monitor: bool = True) -> np.ndarray:
    """Margins ``||f||_2 ||f'||_2 - ||f||_inf^2`` for localized band-limited fields."""
    margins = []
    for f in fields:
        if not isinstance(f, ComplexField):
            raise TypeError("check_gn expects ComplexField samples")
        if monitor:
            check_boundary_mass(f)
        margins.append(l2_norm(f) * l2_norm(spatial_derivative(f, 1)) - lebesgue_sup(f) ** 2)
    return np.array(margins)


def decade_window(times, start: float, decades: float = 1.0) -> tuple[float, float]:
    """Smallest lattice window beginning at the first time >= ``start`` and spanning ``decades``."""
    t = np.sort(np.asarray(times, dtype=float))
    lo_idx = int(np.searchsorted(t, start * (1 - 1e-12)))
    if lo_idx >= t.size:
        raise ValueError("window start lies beyond the last sample")
    lo = t[lo_idx]
    hi_idx = int(np.searchsorted(t, lo * 10**decades * (1 - 1e-12)))
    if hi_idx >= t.size:
        raise ValueError(f"samples do not extend {decades} decade(s) beyond t={lo:g}")
    return float(lo), float(t[hi_idx])


@dataclass
class TheoremDecayReport:
    """Fits of ``||d^k (v - v1)(t)||_2`` and of the transformed quantity near ``t = 0``."""

    times: np.ndarray
    nls_norms: dict[int, np.ndarray]
    transformed_times: np.ndarray
    transformed_norms: dict[int, np.ndarray]
    nls_fits: dict[int, DecayFit | None]
    transformed_fits: dict[int, DecayFit | None]
    exact_match: bool


def _transformed_difference(grid, t: float, v: np.ndarray, v1: np.ndarray, M: float, sign: int, k: int) -> float:
    """``||J^k (u - u1)(1/t)||_2`` with ``u = wick(T v)``, ``u1 = wick(T v1)``.

    The outer samples sit at ``x = y/t`` for the grid points ``y``, where the
    transform is exact pointwise; ``J`` at time ``1/t`` reads ``y/(2t) + i d_y``
    in those coordinates.
    """
    from .transforms import wick_phase

    s = 1.0 / t
    x = grid.x / t
    chirp = np.exp(1j * x**2 / (4 * s)) / np.sqrt(s)
    du = ComplexField(grid, chirp * np.conj(v) - chirp * np.conj(v1))
    du = wick_phase(du, s, M, direction=sign, factor=1.0)
    for _ in range(k):
        du = ComplexField(grid, grid.x / (2 * t) * du.values + 1j * spatial_derivative(du, 1).values)
    return float(np.sqrt(grid.dx / t * np.sum(np.abs(du.physical()) ** 2)))


def theorem_decay_report(grid, times, v_values, v1_values, M: float, sign: int = 1, ks=(0,),
                         window: tuple[float, float] | None = None, transformed: bool = True) -> TheoremDecayReport:
    """Decay of ``v - v1`` in the transformed-equation time and, through the
    pseudo-conformal transform and the Wick phase, near ``t = 0`` for the
    cubic equation.  All-zero differences set ``exact_match`` and skip the fits.
    """
    from .spectral import seminorms

    times = np.asarray(times, dtype=float)
    diff = np.asarray(v_values) - np.asarray(v1_values)
    semi = seminorms(grid, diff, max(ks))
    nls_norms = {k: semi[:, k] for k in ks}
    exact = not np.any(diff)
    tt = 1.0 / times[::-1]
    tr_norms = {}
    if transformed:
        for k in ks:
            tr_norms[k] = np.array([
                _transformed_difference(grid, t, v, v1, M, sign, k)
                for t, v, v1 in zip(times[::-1], np.asarray(v_values)[::-1], np.asarray(v1_values)[::-1])
            ])
    nls_fits, tr_fits = {}, {}
    for k in ks:
        nls_fits[k] = None if exact else fit_decay(times, nls_norms[k], window)
        if transformed:
            mirrored = None if window is None else (1.0 / window[1], 1.0 / window[0])
            tr_fits[k] = None if exact else fit_decay(tt, tr_norms[k], mirrored)
    return TheoremDecayReport(times, nls_norms, tt, tr_norms, nls_fits, tr_fits, exact)


def log_slope(times, values) -> float:
    """Least-squares slope of ``ln value`` against ``ln t`` with no sample-count requirements."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 2 or np.any(v <= 0) or np.any(t <= 0):
        raise ValueError("slope needs at least two positive samples")
    return float(np.polyfit(np.log(t), np.log(v), 1)[0])


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path: str, header, rows):
    """Write ``rows`` under ``header``; floats with 17 significant digits."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_decay_csv(path: str, times, series: dict):
    """Columns ``t`` followed by one column per named series."""
    names = list(series)
    rows = ([t] + [series[name][i] for name in names] for i, t in enumerate(np.asarray(times, dtype=float)))
    write_csv(path, ["t"] + names, rows)


def write_fit_summary(path: str, fits: dict):
    """One row per series: exponent, constant, rms residual and window; ``None`` marks an exact match."""
    rows = []
    for name, fit in fits.items():
        if fit is None:
            rows.append([name, "exact_match", "", "", "", "", 0])
        else:
            rows.append([name, fit.exponent, fit.constant, fit.rms, fit.window[0], fit.window[1], fit.samples])
    write_csv(path, ["series", "exponent", "constant", "rms", "t_lo", "t_hi", "samples"], rows)
