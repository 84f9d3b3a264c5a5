"""Closed-form building blocks: the Dirac-train wave A(t, x), single-Dirac
self-similar solutions, the band-limited scattering profile and its free
evolution, and the assembled approximate solution v1 = A + exp(it d_xx) u+.

Phase convention
----------------
Mode ``j`` of the train carries ``theta_j(t) = -sign * kappa * (|alpha_j|^2 + c) * ln t``.
With ``kappa = 1/2, c = 0`` this is the phase forced by the resonant part of
``(|A|^2 - 2M) A / (2t)``: on the lattice ``j/2`` the only resonant cubic
interactions are the trivial ones, which contribute ``(2M - |a_j|^2) a_j``.
For a single mode the train is then an exact solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial.legendre import leggauss

from .spectral import ComplexField, SpectralGrid

RemainderMap = Mapping[int, Callable[[float], complex]]


class FracuError(ValueError):
    """Scattering profile violates the support-avoidance condition on Z/2."""


class QuadratureError(RuntimeError):
    """Frequency quadrature did not converge under node doubling."""


@dataclass(frozen=True)
class DiracTrain:
    """Finite Dirac train ``sum_j alpha_j delta_j`` and its phase convention."""

    alphas: Mapping[int, complex]
    q: float = 2.0
    kappa: float = 0.5
    c: float = 0.0
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 (focusing) or -1 (defocusing)")
        clean = {int(j): complex(a) for j, a in self.alphas.items()}
        object.__setattr__(self, "alphas", dict(sorted(clean.items())))

    @property
    def modes(self) -> list[int]:
        return list(self.alphas)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.alphas[j] for j in self.modes], dtype=complex)

    @property
    def M(self) -> float:
        return float(np.sum(np.abs(self.coefficients) ** 2))

    def l2q_norm(self) -> float:
        j = np.array(self.modes, dtype=float)
        return float(np.sqrt(np.sum((1 + np.abs(j)) ** (2 * self.q) * np.abs(self.coefficients) ** 2)))

    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.coefficients)))

    def phase_rates(self) -> np.ndarray:
        """Coefficients ``b_j`` with ``theta_j(t) = b_j ln t``."""
        return -self.sign * self.kappa * (np.abs(self.coefficients) ** 2 + self.c)

    def phases(self, t: float) -> np.ndarray:
        return self.phase_rates() * np.log(t)

    def amplitudes(self, t: float, R: RemainderMap | None = None) -> np.ndarray:
        """``a_j(t) = exp(i theta_j(t)) (conj(alpha_j) + conj(R_j(1/t)))``."""
        base = np.conj(self.coefficients).astype(complex)
        if R:
            base = base + np.conj(
                np.array([R[j](1.0 / t) if j in R else 0.0 for j in self.modes], dtype=complex)
            )
        return np.exp(1j * self.phases(t)) * base

    def is_empty(self) -> bool:
        return not np.any(self.coefficients)


def _check_time(t: float):
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")


def dirac_wave(train: DiracTrain, t: float, x, R: RemainderMap | None = None) -> np.ndarray:
    """Meshless ``A(t, x) = sum_j a_j(t) exp(-i t j^2/4 + i x j/2)``."""
    _check_time(t)
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=complex)
    for j, a in zip(train.modes, train.amplitudes(t, R)):
        if a != 0:
            out += a * np.exp(-1j * t * j * j / 4 + 0.5j * j * x)
    return out


def dirac_wave_coefficients(
    train: DiracTrain, t: float, grid: SpectralGrid, R: RemainderMap | None = None
) -> np.ndarray:
    """Continuum-scaled Fourier coefficients of A(t) on ``grid`` (exact lattice modes)."""
    _check_time(t)
    coeffs = np.zeros(grid.n, dtype=complex)
    for j, a in zip(train.modes, train.amplitudes(t, R)):
        coeffs[grid.mode_index(j)] += grid.L * a * np.exp(-1j * t * j * j / 4)
    return coeffs


def dirac_wave_field(
    train: DiracTrain, t: float, grid: SpectralGrid, R: RemainderMap | None = None
) -> ComplexField:
    return ComplexField(grid, grid.ifft(dirac_wave_coefficients(train, t, grid, R)))


def single_dirac_closed_forms(alpha: complex, sign: int = 1, lam: float | None = None):
    """Return evaluators ``(u_alpha(t, x), psi_alpha(t, x))``.

    ``psi_alpha = alpha exp(i x^2/4t)/sqrt(t)`` solves the free equation and
    ``u_alpha = exp(-i lam |alpha|^2 ln t) psi_alpha``.  The default
    ``lam = -sign/2`` makes ``u_alpha`` an exact solution of
    ``i u_t + u_xx + (sign/2)|u|^2 u = 0``, the normalisation reached from the
    transformed equation through the pseudo-conformal map.
    """
    alpha = complex(alpha)
    if lam is None:
        lam = -sign / 2.0

    def psi(t, x):
        _check_time(np.min(t))
        return alpha * np.exp(1j * np.asarray(x) ** 2 / (4 * t)) / np.sqrt(t)

    def u(t, x):
        _check_time(np.min(t))
        return np.exp(-1j * lam * abs(alpha) ** 2 * np.log(t)) * psi(t, x)

    return u, psi


@dataclass(frozen=True)
class ScatteringProfile:
    """Band-limited ``u+`` with ``u+^(xi) = amplitude * exp(-1/(1 - z^2)^smoothness)``
    on ``|z| < 1``, ``z = (xi - center)/width``.

    The constructor does not validate placement; use :func:`scattering_profile_make`
    for checked construction.
    """

    cell: int
    center: float
    width: float
    amplitude: complex = 1.0
    smoothness: float = 1.0
    quad_nodes: int = 256

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.width, self.center + self.width

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0

    def hat(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        z = (xi - self.center) / self.width
        out = np.zeros(xi.shape, dtype=complex)
        inside = np.abs(z) < 1
        if self.amplitude != 0 and np.any(inside):
            out[inside] = self.amplitude * np.exp(-1.0 / (1.0 - z[inside] ** 2) ** self.smoothness)
        return out

    def distance_to_half_integers(self) -> float:
        a, b = self.support
        lattice = np.arange(np.floor(2 * a) - 1, np.ceil(2 * b) + 2) / 2
        if np.any((lattice >= a) & (lattice <= b)):
            return 0.0
        return float(min(np.min(np.abs(lattice - a)), np.min(np.abs(lattice - b))))

    def gauss_nodes(self, panels: int, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre nodes and weights on the support."""
        a, b = self.support
        g, w = leggauss(order)
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + half[:, None] * g[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel()
        return nodes, weights

    def l2_norm(self) -> float:
        nodes, weights = self.gauss_nodes(max(4, self.quad_nodes // 16))
        return float(np.sqrt(np.sum(weights * np.abs(self.hat(nodes)) ** 2) / (2 * np.pi)))

    def sobolev_norm(self, k: int) -> float:
        nodes, weights = self.gauss_nodes(max(4, self.quad_nodes // 16))
        weight = sum(nodes ** (2 * j) for j in range(k + 1))
        return float(np.sqrt(np.sum(weights * weight * np.abs(self.hat(nodes)) ** 2) / (2 * np.pi)))


def scattering_profile_make(
    p: int,
    center: float,
    width: float,
    amplitude: complex = 1.0,
    smoothness: float = 1.0,
    quad_nodes: int = 256,
) -> ScatteringProfile:
    """Checked constructor: the support must lie strictly inside ``(p/2, (p+1)/2)``."""
    if width <= 0:
        raise FracuError("profile width must be positive")
    lo, hi = p / 2, (p + 1) / 2
    if not (lo < center - width and center + width < hi):
        raise FracuError(
            f"condition (fracu): support [{center - width}, {center + width}] must lie strictly "
            f"inside the half-integer cell ({lo}, {hi})"
        )
    if smoothness <= 0 or quad_nodes < 16:
        raise ValueError("smoothness must be positive and quad_nodes >= 16")
    return ScatteringProfile(int(p), float(center), float(width), amplitude, float(smoothness), int(quad_nodes))


def _evolve_with(profile: ScatteringProfile, t: float, x: np.ndarray, panels: int, k: int = 0) -> np.ndarray:
    nodes, weights = profile.gauss_nodes(panels)
    kernel_weights = weights * (1j * nodes) ** k * profile.hat(nodes) * np.exp(-1j * t * nodes**2) / (2 * np.pi)
    out = np.empty(x.shape, dtype=complex)
    flat = x.ravel()
    res = out.ravel()
    chunk = max(1, 2_000_000 // nodes.size)
    for start in range(0, flat.size, chunk):
        xs = flat[start:start + chunk]
        res[start:start + chunk] = np.exp(1j * np.outer(xs, nodes)) @ kernel_weights
    return out


def _panel_count(profile: ScatteringProfile, t: float, x: np.ndarray) -> int:
    a, b = profile.support
    # total variation over [a, b] of the phase -t xi^2 + x xi, maximised over x
    s = abs(t)
    y = np.sign(t) * np.asarray(x, dtype=float).ravel() if t != 0 else np.asarray(x, dtype=float).ravel()
    if y.size == 0:
        return profile.quad_nodes // 16
    if s == 0:
        excursion = float(np.max(np.abs(y))) * (b - a)
    else:
        c = np.clip(y / (2 * s), a, b)
        var = s * ((c - a) ** 2 + (b - c) ** 2) + np.abs(y - 2 * s * c) * (b - a)
        excursion = float(np.max(var))
    return max(profile.quad_nodes // 16, int(np.ceil(excursion / 8.0)) + 2)


def free_evolve_profile(profile: ScatteringProfile, t: float, points, tol: float = 1e-10, k: int = 0) -> np.ndarray:
    """Meshless ``(exp(it d_xx) d_x^k u+)(x)`` by composite Gauss-Legendre quadrature in frequency.

    Exact (no box wraparound) at any ``x``; raises :class:`QuadratureError` if
    doubling the panel count moves any value by more than ``tol``.
    """
    x = np.asarray(points, dtype=float)
    if profile.is_zero:
        return np.zeros(x.shape, dtype=complex)
    panels = _panel_count(profile, t, x)
    coarse = _evolve_with(profile, t, x, panels, k)
    fine = _evolve_with(profile, t, x, 2 * panels, k)
    err = float(np.max(np.abs(fine - coarse))) if x.size else 0.0
    scale = abs(profile.amplitude) * max(1.0, max(abs(a) for a in profile.support)) ** k
    if err > tol * max(1.0, scale):
        raise QuadratureError(f"profile quadrature changed by {err:.2e} under node doubling")
    return fine


def profile_coefficients(profile: ScatteringProfile, t: float, grid: SpectralGrid) -> np.ndarray:
    """Grid Fourier coefficients of ``exp(it d_xx) u+`` (continuum samples of its transform)."""
    return profile.hat(grid.xi) * grid.multiplier(t)


def profile_field(profile: ScatteringProfile, t: float, grid: SpectralGrid) -> ComplexField:
    return ComplexField(grid, grid.ifft(profile_coefficients(profile, t, grid)))


def profile_l1(profile: ScatteringProfile, halfwidth: float | None = None, samples_per_unit: float = 4.0) -> float:
    """``||u+||_1`` by trapezoid quadrature of the meshless evaluation."""
    if profile.is_zero:
        return 0.0
    if halfwidth is None:
        halfwidth = 400.0 / profile.width
    n = int(2 * halfwidth * samples_per_unit) | 1
    x = np.linspace(-halfwidth, halfwidth, n)
    vals = np.abs(free_evolve_profile(profile, 0.0, x))
    return float(np.trapezoid(vals, x))


def fracu_norms(
    profile: ScatteringProfile,
    shifts=range(-20, 21),
    k: int = 1,
    samples: int = 4096,
) -> dict[int, float]:
    """``|| u+^(xi) / (xi + p/2) ||_{H^k}`` for each shift ``p``.

    Computed on a uniform frequency lattice over the support with spectral
    differentiation; the lattice contains the cell end points so a support
    touching a half-integer produces a singular sample.
    """
    a, b = profile.support
    pad = 0.25 * (b - a)
    xi = np.linspace(a - pad, b + pad, samples, endpoint=False)
    h = xi[1] - xi[0]
    freq = 2 * np.pi * np.fft.fftfreq(samples, d=h)
    hat = profile.hat(xi)
    out = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        for p in shifts:
            denom = xi + p / 2
            g = np.where(hat != 0, hat / denom, 0.0)
            if not np.all(np.isfinite(g)):
                out[p] = float("inf")
                continue
            coeffs = np.fft.fft(g)
            total = 0.0
            for j in range(k + 1):
                deriv = np.fft.ifft((1j * freq) ** j * coeffs)
                total += h * np.sum(np.abs(deriv) ** 2)
            out[p] = float(np.sqrt(total))
    return out


def check_fracu(
    profile: ScatteringProfile, shifts=range(-20, 21), k: int = 1, rtol: float = 1e-6
) -> tuple[bool, dict[int, float]]:
    """Finite and refinement-stable ``H^k`` norms of ``u+^ / (. + p/2)`` for every shift."""
    if profile.is_zero:
        return True, {p: 0.0 for p in shifts}
    coarse = fracu_norms(profile, shifts, k, samples=2048)
    fine = fracu_norms(profile, shifts, k, samples=8192)
    ok = True
    for p in shifts:
        c, f = coarse[p], fine[p]
        if not (np.isfinite(c) and np.isfinite(f)) or abs(f - c) > rtol * max(abs(f), 1e-300):
            ok = False
    return ok, fine


def v1_assemble(train: DiracTrain, profile: ScatteringProfile, t: float, x, R: RemainderMap | None = None) -> np.ndarray:
    """Meshless ``v1(t, x) = A(t, x) + (exp(it d_xx) u+)(x)``."""
    return dirac_wave(train, t, x, R) + free_evolve_profile(profile, t, x)


def v1_field(
    train: DiracTrain, profile: ScatteringProfile, t: float, grid: SpectralGrid, R: RemainderMap | None = None
) -> ComplexField:
    coeffs = dirac_wave_coefficients(train, t, grid, R) + profile_coefficients(profile, t, grid)
    return ComplexField(grid, grid.ifft(coeffs))


@dataclass
class ModeTrace:
    """Extracted amplitude ``A_j(t)`` of one lattice mode and the remainder ``R_j(1/t)``."""

    j: int
    times: np.ndarray
    amplitudes: np.ndarray
    remainders: np.ndarray = field(repr=False)

    def remainder_function(self) -> Callable[[float], complex]:
        """Interpolant ``tau -> R_j(tau)`` (linear in ``ln t``), for feeding back into A."""
        logt = np.log(self.times)
        re, im = self.remainders.real, self.remainders.imag

        def R(tau: float) -> complex:
            lt = np.log(1.0 / tau)
            return complex(np.interp(lt, logt, re), np.interp(lt, logt, im))

        return R


def extract_modes(snapshots, train: DiracTrain) -> dict[int, ModeTrace]:
    """Project ``(t, field)`` snapshots onto the train lattice modes.

    ``A_j(t) = exp(i t j^2/4) (1/L) int v exp(-i x j/2) dx`` and
    ``R_j(1/t) = conj(exp(-i theta_j(t)) A_j(t)) - alpha_j``.
    """
    times = np.array([t for t, _ in snapshots], dtype=float)
    amps = {j: np.empty(times.size, dtype=complex) for j in train.modes}
    for i, (t, f) in enumerate(snapshots):
        coeffs = f.fourier()
        for j in train.modes:
            amps[j][i] = np.exp(1j * t * j * j / 4) * coeffs[f.grid.mode_index(j)] / f.grid.L
    traces = {}
    rates = dict(zip(train.modes, train.phase_rates()))
    for j in train.modes:
        phase = np.exp(-1j * rates[j] * np.log(times))
        rbar = phase * amps[j] - np.conj(train.alphas[j])
        traces[j] = ModeTrace(j, times, amps[j], np.conj(rbar))
    return traces


def canonical_profiles() -> list[ScatteringProfile]:
    """Five bump profiles covering different cells, widths, amplitudes and smoothness orders."""
    return [
        scattering_profile_make(0, 0.25, 0.22, 2.0),
        scattering_profile_make(0, 0.25, 0.125, 1.0),
        scattering_profile_make(0, 0.2, 0.1, 1.5, smoothness=2.0),
        scattering_profile_make(1, 0.75, 0.2, 1.0),
        scattering_profile_make(-2, -0.8, 0.15, 0.5 + 0.5j),
    ]
