"""Fixed-point machinery for ``v = v1 + r`` with ``r(t) -> 0`` as ``t -> inf``.

With ``L = i d_t + d_xx`` and ``N(v) = sigma (|v|^2 - 2M) v / (2t)`` the
equation reads ``L v + N(v) = 0`` and, since ``L exp(it d_xx) u+ = 0``,

    phi(v)(t) = v1(t) + i int_t^T exp(i(t - tau) d_xx) [-N(v) - L A](tau) dtau.

Writing ``w = exp(i tau d_xx) u+`` and ``A0`` for the train with no
remainders, ``-N(v) - L A`` splits into

    I   : -sigma [(|v|^2-2M) v - (|v1|^2-2M) v1] / 2tau
    Ja  : -sigma (|A0|^2 - M) w / tau              (off-diagonal mode pairs)
    Jb  : -sigma (|A|^2 - |A0|^2) w / tau           (needs measured remainders)
    Jc  : -sigma A^2 conj(w) / 2tau
    Jd  : -sigma (2 A |w|^2 + conj(A) w^2) / 2tau
    Je  : -sigma |w|^2 w / 2tau
    Jdef: -(L A + N(A))                             (train self-interaction defect)

``Jdef`` vanishes identically for a single mode.  For longer trains with no
remainders it is the non-resonant cubic interaction of the modes: a sum of
plane waves, not square integrable on the line, which exact remainders would
absorb.  It is therefore left out of ``phi`` unless explicitly requested, and
always dropped when remainders are supplied.

Every term is integrated in the interaction picture ``exp(i tau xi^2) G^(tau)``
by composite Gauss-Legendre quadrature and accumulated backwards from ``T``,
so one sweep yields the term at every snapshot time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from numpy.polynomial.legendre import leggauss

from .profiles import DiracTrain, RemainderMap, ScatteringProfile
from .spectral import ComplexField, SpectralGrid, fft_workers, seminorms

TERMS = ("Ja", "Jb", "Jc", "Jd", "Je")
#: Optional diagnostic: the train self-interaction defect (not square integrable on the line).
DEFECT = "Jdef"


class QuadratureRefinementError(RuntimeError):
    """Doubling the panel count moved a result beyond tolerance."""


class PicardDivergence(RuntimeError):
    """The Picard update norm grew for several consecutive iterations."""


@dataclass(frozen=True)
class SourceTermSpec:
    """Quadrature controls for the source terms."""

    train: DiracTrain
    profile: ScatteringProfile
    T_max: float
    t0: float
    panels_per_decade: int = 8
    panel_width: float = 1.0
    order: int = 8
    remainders: RemainderMap | None = None

    def __post_init__(self):
        if self.T_max < 10 * self.t0:
            raise ValueError(f"T_max={self.T_max} must be at least 10 t0 = {10 * self.t0}")
        if self.panels_per_decade < 4:
            raise ValueError("need at least 4 panels per decade")
        if self.panel_width <= 0 or self.order < 2:
            raise ValueError("panel width must be positive and order >= 2")

    def refined(self) -> "SourceTermSpec":
        return SourceTermSpec(self.train, self.profile, self.T_max, self.t0, 2 * self.panels_per_decade,
                              self.panel_width / 2, self.order, self.remainders)


@dataclass(frozen=True)
class SNormWeights:
    mu: float = 0.4
    s: int = 1
    t0: float = 20.0

    def __post_init__(self):
        if not 0 < self.mu < 0.5:
            raise ValueError(f"time weight mu must lie in (0, 1/2), got {self.mu}")
        if int(self.s) != self.s or self.s < 1:
            raise ValueError("top derivative order s must be a positive integer")


@dataclass(frozen=True)
class ShiftedProfile:
    """``u+^(xi) / prod_i (xi + shifts_i / 2)``; the divisors never vanish on the support."""

    base: ScatteringProfile
    shifts: tuple[int, ...]

    def __post_init__(self):
        a, b = self.base.support
        for p in self.shifts:
            if a <= -p / 2 <= b:
                raise ValueError(f"divisor xi + {p}/2 vanishes on the profile support")

    def hat(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        out = self.base.hat(xi)
        nz = out != 0
        denom = np.ones(xi.shape)
        for p in self.shifts:
            denom = denom * (xi + p / 2)
        out[nz] = out[nz] / denom[nz]
        return out


# ---------------------------------------------------------------------------
# quadrature sweep


def _panels(a: float, b: float, spec_ppd: int, width: float, order: int):
    count = max(1, int(np.ceil((b - a) / width)), int(np.ceil(spec_ppd * np.log10(b / a))))
    g, w = leggauss(order)
    edges = np.linspace(a, b, count + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * g).ravel(), (half[:, None] * w).ravel()


def _breakpoints(times: np.ndarray, T: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("snapshot times must be positive and increasing")
    if times[-1] > T * (1 + 1e-12):
        raise ValueError("snapshot times exceed the truncation time T")
    return times if abs(times[-1] - T) <= 1e-12 * T else np.append(times, T)


def _sweep(grid: SpectralGrid, times, T: float, integrand, nterms: int, ppd: int, width: float,
           order: int) -> np.ndarray:
    """``i exp(-i t xi^2) int_t^T exp(i tau xi^2) G^(tau) dtau`` at each snapshot time.

    ``integrand(tau, phase)`` receives ``phase = exp(i tau xi^2)`` and returns
    physical samples with shape ``(nterms, n)``; the result holds continuum-scaled
    Fourier coefficients with shape ``(len(times), nterms, n)``.
    """
    times = np.asarray(times, dtype=float)
    brk = _breakpoints(times, T)
    xi2 = grid.xi**2
    scale = grid.dx * grid._shift
    workers = fft_workers()
    out = np.zeros((times.size, nterms, grid.n), dtype=complex)
    running = np.zeros((nterms, grid.n), dtype=complex)
    for i in range(brk.size - 2, -1, -1):
        nodes, weights = _panels(brk[i], brk[i + 1], ppd, width, order)
        for tau, wt in zip(nodes, weights):
            phase = np.exp(1j * tau * xi2)
            G = integrand(tau, phase)
            running += (wt * phase) * sfft.fft(G, axis=-1, workers=workers)
        if i < times.size:
            out[i] = (1j * scale * np.exp(-1j * times[i] * xi2)) * running
    return out


class _Background:
    """Per-node evaluation of ``A(tau)``, ``A0(tau)`` and ``w(tau)`` on a grid."""

    def __init__(self, train: DiracTrain, profile: ScatteringProfile, grid: SpectralGrid,
                 remainders: RemainderMap | None = None):
        self.train, self.profile, self.grid, self.R = train, profile, grid, remainders
        self.modes = train.modes
        for j in self.modes:
            grid.mode_index(j)
        self.waves = {j: np.exp(0.5j * j * grid.x) for j in self.modes}
        self.uhat = profile.hat(grid.xi)
        self._uhat_raw = self.uhat * grid._shift / grid.dx
        self.M = train.M

    def train_wave(self, tau: float, R=None) -> np.ndarray:
        out = np.zeros(self.grid.n, dtype=complex)
        for j, a in zip(self.modes, self.train.amplitudes(tau, R)):
            if a != 0:
                out += a * np.exp(-1j * tau * j * j / 4) * self.waves[j]
        return out

    def off_diagonal(self, tau: float) -> np.ndarray:
        """``|A0|^2 - M`` as the explicit sum over mode pairs ``p != j``."""
        out = np.zeros(self.grid.n)
        amps = dict(zip(self.modes, self.train.amplitudes(tau)))
        for i, j in enumerate(self.modes):
            for p in self.modes[i + 1:]:
                c = amps[j] * np.conj(amps[p]) * np.exp(-1j * tau * (j * j - p * p) / 4)
                if c != 0:
                    out += 2 * np.real(c * self.waves[j] * np.conj(self.waves[p]))
        return out

    def free(self, tau: float, phase: np.ndarray | None = None) -> np.ndarray:
        """``w(tau)``; ``phase`` may pass a precomputed ``exp(i tau xi^2)``."""
        if self.profile.is_zero:
            return np.zeros(self.grid.n, dtype=complex)
        if phase is None:
            phase = np.exp(1j * tau * self.grid.xi**2)
        return sfft.ifft(self._uhat_raw * np.conj(phase), workers=fft_workers())

    def defect(self, tau: float, A: np.ndarray) -> np.ndarray:
        """``L A + N(A)`` for the remainder-free train."""
        tr = self.train
        lin = np.zeros(self.grid.n, dtype=complex)
        coef = tr.sign * tr.kappa * (np.abs(tr.coefficients) ** 2 + tr.c) / tau
        for j, a, cj in zip(self.modes, tr.amplitudes(tau), coef):
            if a != 0:
                lin += cj * a * np.exp(-1j * tau * j * j / 4) * self.waves[j]
        return lin + tr.sign * (np.abs(A) ** 2 - 2 * self.M) * A / (2 * tau)


def _source_integrand(bg: _Background, terms: tuple[str, ...]):
    sigma = bg.train.sign
    M = bg.M

    def integrand(tau: float, phase: np.ndarray) -> np.ndarray:
        A0 = bg.train_wave(tau)
        A = bg.train_wave(tau, bg.R) if bg.R else A0
        w = bg.free(tau, phase)
        out = np.empty((len(terms), bg.grid.n), dtype=complex)
        for k, name in enumerate(terms):
            if name == "Ja":
                out[k] = -sigma * bg.off_diagonal(tau) * w / tau
            elif name == "Jb":
                out[k] = -sigma * (np.abs(A) ** 2 - np.abs(A0) ** 2) * w / tau
            elif name == "Jc":
                out[k] = -sigma * A**2 * np.conj(w) / (2 * tau)
            elif name == "Jd":
                out[k] = -sigma * (2 * A * np.abs(w) ** 2 + np.conj(A) * w**2) / (2 * tau)
            elif name == "Je":
                out[k] = -sigma * np.abs(w) ** 2 * w / (2 * tau)
            elif name == DEFECT:
                out[k] = 0.0 if bg.R else -bg.defect(tau, A0)
            else:
                raise ValueError(f"unknown source term {name!r}")
        return out

    return integrand


@dataclass
class SourceTerms:
    """Source terms at every snapshot time, in physical representation."""

    grid: SpectralGrid
    times: np.ndarray
    fields: dict[str, np.ndarray]
    tail_bound: float
    refinement: dict[str, float] = field(default_factory=dict)

    def total(self) -> np.ndarray:
        out = np.zeros((self.times.size, self.grid.n), dtype=complex)
        for v in self.fields.values():
            out += v
        return out

    def field_at(self, name: str, i: int) -> ComplexField:
        return ComplexField(self.grid, self.fields[name][i])


def _tail_bound(integrand, T: float, grid: SpectralGrid) -> float:
    # integrands decay at least like tau^(-3/2) in L2, so int_T^inf <= 2 T ||G(T)||
    G = integrand(T, np.exp(1j * T * grid.xi**2))
    return float(2 * T * np.sum(np.sqrt(grid.dx * np.sum(np.abs(G) ** 2, axis=-1))))


def source_terms(spec: SourceTermSpec, times, grid: SpectralGrid, terms=TERMS, check: bool = True,
                 rtol: float = 1e-6) -> SourceTerms:
    """Evaluate the requested source terms at ``times`` (all at or below ``T_max``).

    With ``check`` the sweep is repeated with doubled panels; a relative L2
    change above ``rtol`` at any snapshot raises :class:`QuadratureRefinementError`.
    ``Jb`` is evaluated only when ``spec.remainders`` holds measured remainders.
    """
    terms = tuple(t for t in terms if t != "Jb" or spec.remainders)
    bg = _Background(spec.train, spec.profile, grid, spec.remainders)
    integrand = _source_integrand(bg, terms)
    zero = spec.profile.is_zero and all(t != DEFECT for t in terms)
    if zero or not terms:
        fields = {t: np.zeros((len(times), grid.n), dtype=complex) for t in terms}
        return SourceTerms(grid, np.asarray(times, float), fields, 0.0)
    coarse = _sweep(grid, times, spec.T_max, integrand, len(terms), spec.panels_per_decade, spec.panel_width,
                    spec.order)
    refinement = {}
    if check:
        fine_spec = spec.refined()
        fine = _sweep(grid, times, spec.T_max, integrand, len(terms), fine_spec.panels_per_decade,
                      fine_spec.panel_width, spec.order)
        for k, name in enumerate(terms):
            num = np.sqrt(np.sum(np.abs(fine[:, k] - coarse[:, k]) ** 2, axis=-1))
            den = np.sqrt(np.sum(np.abs(fine[:, k]) ** 2, axis=-1))
            rel = float(np.max(np.where(den > 0, num / np.where(den > 0, den, 1), 0.0)))
            refinement[name] = rel
            if rel > rtol:
                raise QuadratureRefinementError(
                    f"{name}: doubling the panels changed the L2 norm by {rel:.2e} (> {rtol:.0e})"
                )
        coarse = fine
    fields = {name: grid.ifft(coarse[:, k]) for k, name in enumerate(terms)}
    return SourceTerms(grid, np.asarray(times, float), fields, _tail_bound(integrand, spec.T_max, grid),
                       refinement)


def source_term(spec: SourceTermSpec, tag: str, t: float, grid: SpectralGrid, check: bool = True) -> ComplexField:
    """A single source term at a single time."""
    if t < spec.t0:
        raise ValueError("source terms are defined for t >= t0")
    if tag == "Jb" and not spec.remainders:
        return ComplexField.zeros(grid)
    res = source_terms(spec, [t], grid, terms=(tag,), check=check)
    return res.field_at(tag, 0)


# ---------------------------------------------------------------------------
# integration-by-parts oracle


def _ibp_scaled(t: float, T: float, Omega: np.ndarray, beta: float, ppd: int, width: float, order: int):
    """``i Omega int_t^T tau^(i beta - 1) exp(i Omega tau) dtau`` after one integration by parts.

    Returns the boundary part ``[exp(i Omega tau) tau^(i beta - 1)]_t^T`` and the
    total, which adds ``-(i beta - 1) int exp(i Omega tau) tau^(i beta - 2)``.
    """
    def amp(tau):
        return np.exp(1j * Omega * tau) * tau ** (1j * beta - 1)

    boundary = amp(T) - amp(t)
    rem = np.zeros(Omega.shape, dtype=complex)
    brk = np.geomspace(t, T, max(2, int(np.ceil(np.log10(T / t) * ppd)) + 1))
    for a, b in zip(brk[:-1], brk[1:]):
        nodes, weights = _panels(a, b, 1, width, order)
        for tau, wt in zip(nodes, weights):
            rem += wt * np.exp(1j * Omega * tau) * tau ** (1j * beta - 2)
    return boundary, boundary - (1j * beta - 1) * rem


def log_power_integral(t: float, T: float, Omega, beta: float, ppd: int = 8, width: float = 1.0,
                       order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """``int_t^T tau^(i beta - 1) exp(i Omega tau) dtau`` by one integration by parts.

    Returns ``(boundary term, full value)``; ``Omega`` must not vanish.
    """
    Omega = np.asarray(Omega, dtype=float)
    if np.any(Omega == 0):
        raise ValueError("integration by parts needs nonzero phase frequency")
    boundary, total = _ibp_scaled(t, T, Omega, beta, ppd, width, order)
    return boundary / (1j * Omega), total / (1j * Omega)


def source_term_ibp(spec: SourceTermSpec, tag: str, t: float, grid: SpectralGrid,
                    boundary_only: bool = False) -> ComplexField:
    """Fourier-space evaluation of ``Ja`` or ``Jc1`` (remainder-free train) via one IBP in time.

    ``Ja^(t, xi) = -i sigma exp(-i t xi^2) sum_{p != j} conj(a_j) a_p u+^(eta) K(Omega, beta)``
    with ``eta = xi - (j - p)/2``, ``Omega = (j - p)(eta - p/2)``; ``Jc1`` pairs all
    ``(j, p)`` with ``eta = (j + p)/2 - xi`` and ``Omega = 2 (eta - j/2)(eta - p/2)``.
    The division by ``Omega`` is carried by the shifted profiles.
    """
    train, prof = spec.train, spec.profile
    sigma = train.sign
    rates = dict(zip(train.modes, train.phase_rates()))
    alphas = train.alphas
    xi = grid.xi
    out = np.zeros(grid.n, dtype=complex)
    if prof.is_zero:
        return ComplexField.zeros(grid)
    pick = 0 if boundary_only else 1
    if tag == "Ja":
        for j in train.modes:
            for p in train.modes:
                if p == j:
                    continue
                eta = xi - (j - p) / 2
                mask = prof.hat(eta) != 0
                if not np.any(mask):
                    continue
                Omega = (j - p) * (eta[mask] - p / 2)
                K = _ibp_scaled(t, spec.T_max, Omega, rates[j] - rates[p], spec.panels_per_decade,
                                spec.panel_width, spec.order)[pick]
                # u+^(eta) / (i Omega): the shifted profile carries the division
                shifted = ShiftedProfile(prof, (-p,)).hat(eta[mask]) / (1j * (j - p))
                out[mask] += np.conj(alphas[j]) * alphas[p] * shifted * K
        out *= -1j * sigma
    elif tag == "Jc1":
        for j in train.modes:
            for p in train.modes:
                eta = (j + p) / 2 - xi
                mask = prof.hat(eta) != 0
                if not np.any(mask):
                    continue
                Omega = 2 * (eta[mask] - j / 2) * (eta[mask] - p / 2)
                K = _ibp_scaled(t, spec.T_max, Omega, rates[j] + rates[p], spec.panels_per_decade,
                                spec.panel_width, spec.order)[pick]
                shifted = np.conj(ShiftedProfile(prof, (-j, -p)).hat(eta[mask])) / 2j
                out[mask] += np.conj(alphas[j]) * np.conj(alphas[p]) * shifted * K
        out *= -0.5j * sigma
    else:
        raise ValueError("IBP oracle covers Ja and Jc1 only")
    out *= np.exp(-1j * t * xi**2)
    return ComplexField(grid, grid.ifft(out))


# ---------------------------------------------------------------------------
# functional I, phi, S-norm, Picard


class _SnapshotInterpolant:
    """``r(tau)`` from snapshots, linear in ``ln tau`` in the interaction picture."""

    def __init__(self, grid: SpectralGrid, times: np.ndarray, values: np.ndarray):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.logt = np.log(self.times)
        xi2 = grid.xi**2
        self.inter = np.exp(1j * self.times[:, None] * xi2) * grid.fft(values)

    def __call__(self, tau: float, phase: np.ndarray | None = None) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.times, tau, side="right") - 1, 0, self.times.size - 2))
        lam = (np.log(tau) - self.logt[k]) / (self.logt[k + 1] - self.logt[k])
        coeff = (1 - lam) * self.inter[k] + lam * self.inter[k + 1]
        if phase is None:
            phase = np.exp(1j * tau * self.grid.xi**2)
        return self.grid.ifft(np.conj(phase) * coeff)


def _nonlinearity(v: np.ndarray, M: float) -> np.ndarray:
    return (np.abs(v) ** 2 - 2 * M) * v


def functional_I(spec: SourceTermSpec, grid: SpectralGrid, times, r_values: np.ndarray,
                 method: str = "dense", rtol: float = 1e-3) -> np.ndarray:
    """``I(v1 + r)`` at every snapshot (physical samples), ``r`` given on the snapshot lattice.

    ``method="dense"`` integrates on the source-term nodes with ``v1`` exact
    and ``r`` interpolated between snapshots; ``method="snapshot"`` uses the
    trapezoid rule in ``ln tau`` on the snapshots only, with a refinement check
    against every other snapshot (tolerance ``rtol``).
    """
    times = np.asarray(times, dtype=float)
    r_values = np.asarray(r_values, dtype=complex)
    if not np.any(r_values):
        return np.zeros_like(r_values)
    if abs(times[-1] - spec.T_max) > 1e-12 * spec.T_max:
        raise ValueError("the snapshot family must end at T_max")
    sigma, M = spec.train.sign, spec.train.M
    bg = _Background(spec.train, spec.profile, grid, spec.remainders)

    def v1_at(tau, phase=None):
        return bg.train_wave(tau, bg.R) + bg.free(tau, phase)

    if method == "dense":
        interp = _SnapshotInterpolant(grid, times, r_values)

        def integrand(tau, phase):
            v1 = v1_at(tau, phase)
            v = v1 + interp(tau, phase)
            return (-sigma * (_nonlinearity(v, M) - _nonlinearity(v1, M)) / (2 * tau))[None, :]

        coeffs = _sweep(grid, times, spec.T_max, integrand, 1, spec.panels_per_decade, spec.panel_width,
                        spec.order)
        return grid.ifft(coeffs[:, 0])
    if method != "snapshot":
        raise ValueError(f"unknown method {method!r}")
    xi2 = grid.xi**2
    G = np.empty_like(r_values)
    for i, tau in enumerate(times):
        v1 = v1_at(tau)
        G[i] = np.exp(1j * tau * xi2) * grid.fft(
            -sigma * (_nonlinearity(v1 + r_values[i], M) - _nonlinearity(v1, M)) / (2 * tau)
        )

    def trapezoid(idx):
        out = np.zeros((times.size, grid.n), dtype=complex)
        running = np.zeros(grid.n, dtype=complex)
        lt = np.log(times)
        for a, b in zip(idx[-2::-1], idx[:0:-1]):
            h = lt[b] - lt[a]
            running = running + 0.5 * h * (times[a] * G[a] + times[b] * G[b])
            out[a] = running
        return out

    full = trapezoid(np.arange(times.size))
    coarse = trapezoid(np.arange(0, times.size, 2)) if times.size > 2 and (times.size - 1) % 2 == 0 else None
    if coarse is not None:
        sel = np.arange(0, times.size - 1, 2)
        num = np.sqrt(np.sum(np.abs(full[sel] - coarse[sel]) ** 2, axis=-1))
        den = np.sqrt(np.sum(np.abs(full[sel]) ** 2, axis=-1))
        rel = np.max(np.where(den > 0, num / np.where(den > 0, den, 1), 0.0))
        if rel > rtol:
            raise QuadratureRefinementError(f"snapshot trapezoid for I changed by {rel:.2e} on refinement")
    return grid.ifft(1j * np.exp(-1j * times[:, None] * xi2) * full)


def s_norm(grid: SpectralGrid, times, values: np.ndarray, weights: SNormWeights) -> float:
    """``sum_{k<=s} sup_t t^mu ||d^k f(t)||_2`` over the snapshots."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[None, :]
    if times.size == 0:
        raise ValueError("empty family")
    semi = seminorms(grid, values, weights.s)
    return float(np.sum(np.max(times[:, None] ** weights.mu * semi, axis=0)))


def v1_family(spec: SourceTermSpec, grid: SpectralGrid, times) -> np.ndarray:
    bg = _Background(spec.train, spec.profile, grid, spec.remainders)
    return np.array([bg.train_wave(t, bg.R) + bg.free(t) for t in times])


def phi_apply(spec: SourceTermSpec, grid: SpectralGrid, times, r_values: np.ndarray,
              sources: SourceTerms | None = None, method: str = "dense") -> np.ndarray:
    """``phi(v1 + r) - v1`` on the snapshot lattice: ``I(v1 + r)`` plus every source term."""
    if sources is None:
        sources = source_terms(spec, times, grid)
    return functional_I(spec, grid, times, r_values, method) + sources.total()


@dataclass
class PicardReport:
    times: np.ndarray
    r_values: np.ndarray
    update_norms: list[float]
    ratios: list[float]
    tail_bounds: list[float]
    converged: bool
    sources: SourceTerms

    @property
    def iterations(self) -> int:
        return len(self.update_norms)

    def write_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "update_S_norm", "contraction_ratio", "tail_bound"])
            for i, (u, r, tb) in enumerate(zip(self.update_norms, self.ratios, self.tail_bounds), start=1):
                writer.writerow([i, f"{u:.17g}", f"{r:.17g}", f"{tb:.17g}"])


def picard_solve(spec: SourceTermSpec, grid: SpectralGrid, times, weights: SNormWeights, tol: float = 1e-8,
                 max_iter: int = 15, sources: SourceTerms | None = None, method: str = "dense",
                 patience: int = 3) -> PicardReport:
    """Iterate ``r <- phi(v1 + r) - v1`` from ``r = 0`` until the S-norm update drops below ``tol``."""
    times = np.asarray(times, dtype=float)
    if sources is None:
        sources = source_terms(spec, times, grid)
    S = sources.total()
    r = np.zeros((times.size, grid.n), dtype=complex)
    updates, ratios, tails = [], [], []
    growth = 0
    converged = False
    for it in range(max_iter):
        new = functional_I(spec, grid, times, r, method) + S
        upd = s_norm(grid, times, new - r, weights)
        ratio = upd / updates[-1] if updates and updates[-1] > 0 else float("nan")
        growth = growth + 1 if updates and upd > updates[-1] else 0
        updates.append(upd)
        ratios.append(ratio)
        tails.append(sources.tail_bound)
        r = new
        if not np.all(np.isfinite(r)):
            raise PicardDivergence(f"non-finite iterate at iteration {it + 1}")
        if upd < tol:
            converged = True
            break
        if growth >= patience:
            raise PicardDivergence(
                f"update S-norm grew for {patience} consecutive iterations: {updates[-patience - 1:]}"
            )
    return PicardReport(times, r, updates, ratios, tails, converged, sources)


def stability_inclusion(spec: SourceTermSpec, grid: SpectralGrid, times, weights: SNormWeights, delta: float,
                        sources: SourceTerms, samples: int = 3, seed: int = 0) -> list[tuple[float, float]]:
    """``(||v - v1||_S, ||phi(v) - v1||_S)`` for random ``v`` on the sphere ``||v - v1||_S = delta``.

    Perturbations are ``(t0/t)^mu g`` for localized random packets ``g``.
    """
    rng = np.random.default_rng(seed)
    times = np.asarray(times, dtype=float)
    out = []
    for _ in range(samples):
        g = np.zeros(grid.n, dtype=complex)
        for _ in range(3):
            c = rng.uniform(-20, 20)
            width = rng.uniform(2, 6)
            k = rng.uniform(-1, 1)
            g += (rng.normal() + 1j * rng.normal()) * np.exp(-((grid.x - c) / width) ** 2 + 1j * k * grid.x)
        r = (times[0] / times)[:, None] ** weights.mu * g[None, :]
        r *= delta / s_norm(grid, times, r, weights)
        image = phi_apply(spec, grid, times, r, sources)
        out.append((s_norm(grid, times, r, weights), s_norm(grid, times, image, weights)))
    return out
