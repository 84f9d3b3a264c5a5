"""Pseudo-conformal transform, the operator J = x/2 + i t d_x, the Wick phase
and the identities linking solutions of the transformed equation back to the
original cubic equation near t = 0.

For a field ``f(s, y)`` the transform is

    (T f)(t, x) = exp(i x^2 / 4t) t^(-1/2) conj(f(1/t, x/t)),

an involution and an L2 isometry.  On the inner side ``J`` acts at time
``s = 1/t`` and ``d_x^k T = T (-i)^k J^k``.

Normalisation used for equation transport: if ``v`` solves

    i v_t + v_xx + (sigma/2t)(|v|^2 - 2M) v = 0,

then ``psi = T v`` solves ``i psi_t + psi_xx + (sigma/2)(|psi|^2 - 2M/t) psi = 0``
and ``u = exp(i sigma M ln t) psi`` solves ``i u_t + u_xx + (sigma/2)|u|^2 u = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .profiles import ScatteringProfile, free_evolve_profile
from .spectral import (
    ComplexField,
    SpectralGrid,
    band_limited_eval,
    boundary_mass_fraction,
    l2_norm,
    spatial_derivative,
)

Evaluator = Callable[[float, np.ndarray], np.ndarray]
Source = Union[Evaluator, ComplexField]


class EvaluationRangeError(ValueError):
    """Inner points ``x/t`` fall where a grid field cannot be trusted."""


def _inner_values(f: Source, s: float, y: np.ndarray, mass_limit: float = 1e-6) -> np.ndarray:
    if callable(f) and not isinstance(f, ComplexField):
        return np.asarray(f(s, y), dtype=complex)
    half = 0.5 * f.grid.L
    outside = np.abs(y) > half
    if np.any(outside) and boundary_mass_fraction(f) > mass_limit:
        raise EvaluationRangeError(
            f"inner points reach |y| = {np.max(np.abs(y)):.4g} beyond the box half-length {half:.4g} "
            "and the field is not negligible near the box edge"
        )
    out = np.zeros(y.shape, dtype=complex)
    inside = ~outside
    out[inside] = band_limited_eval(f, y[inside])
    return out


@dataclass(frozen=True)
class TransformedField:
    """Lazy ``T f``: evaluable at any ``(t, x)``, and itself a valid source for ``T``."""

    source: Evaluator

    def __call__(self, t: float, x) -> np.ndarray:
        if not t > 0:
            raise ValueError("pseudo-conformal transform needs t > 0")
        x = np.asarray(x, dtype=float)
        inner = self.source(1.0 / t, x / t)
        return np.exp(1j * x**2 / (4 * t)) / np.sqrt(t) * np.conj(inner)

    def sample(self, t: float, grid: SpectralGrid) -> ComplexField:
        return ComplexField(grid, self(t, grid.x))


def pseudo_conformal(f: Source, t: float, grid: SpectralGrid) -> ComplexField:
    """Sample ``(T f)(t, .)`` on ``grid``.

    ``f`` is either a meshless evaluator ``(s, y) -> values`` or a grid field
    holding ``f(1/t, .)``; the latter is resampled at ``x/t`` by band-limited
    interpolation, with points outside its box taken as zero when the field
    has negligible edge mass (otherwise :class:`EvaluationRangeError`).
    """
    if not t > 0:
        raise ValueError("pseudo-conformal transform needs t > 0")
    x = grid.x
    inner = _inner_values(f, 1.0 / t, x / t)
    return ComplexField(grid, np.exp(1j * x**2 / (4 * t)) / np.sqrt(t) * np.conj(inner))


def j_operator(f: ComplexField, t: float) -> ComplexField:
    """``J f = (x/2) f + i t d_x f`` with a spectral derivative."""
    values = 0.5 * f.grid.x * f.physical()
    if t != 0:
        values = values + 1j * t * spatial_derivative(f, 1).physical()
    return ComplexField(f.grid, values)


def wick_phase(f: ComplexField, t: float, M: float, direction: int = 1, factor: float = 2.0) -> ComplexField:
    """Multiply by ``exp(i direction factor M ln t)``.

    ``factor = 2`` is the renormalisation as usually written; equation
    transport with the transformed equation above needs ``factor = 1`` and
    ``direction = sigma`` to go from ``psi`` to ``u``.
    """
    if not t > 0:
        raise ValueError("Wick phase needs t > 0")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    return f * np.exp(1j * direction * factor * M * np.log(t))


def commutation_defect(f: ComplexField, t: float, k: int, outer: SpectralGrid | None = None) -> float:
    """``|| d_x^k T f - T((-i)^k J^k f) ||_2`` with ``f`` the field at inner time ``1/t``."""
    if k < 0:
        raise ValueError("derivative order must be non-negative")
    if k == 0:
        return 0.0
    outer = outer or f.grid
    lhs = spatial_derivative(pseudo_conformal(f, t, outer), k)
    g = f
    for _ in range(k):
        g = j_operator(g, 1.0 / t)
    rhs = pseudo_conformal(g * (-1j) ** k, t, outer)
    return l2_norm(lhs - rhs)


def small_time_limit(profile: ScatteringProfile, x, k: int = 0, convention: str = "minus_i") -> np.ndarray:
    """Limit of ``T(exp(i . d_xx) d_x^k u+)(t, x)`` as ``t -> 0``.

    Stationary phase in this package's Fourier convention gives
    ``exp(i pi/4)/sqrt(4 pi) (-i x/2)^k conj(u+^(x/2))``; ``convention="real"``
    replaces ``(-i x/2)^k`` by ``(x/2)^k`` (same modulus).
    """
    x = np.asarray(x, dtype=float)
    if convention == "minus_i":
        poly = (-0.5j * x) ** k
    elif convention == "real":
        poly = (0.5 * x) ** k
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return np.exp(0.25j * np.pi) / np.sqrt(4 * np.pi) * poly * np.conj(profile.hat(0.5 * x))


def small_time_limit_defect(
    profile: ScatteringProfile, t: float, k: int = 0, halo: float = 2.0, spacing: float = 2e-3,
    convention: str = "minus_i",
) -> float:
    """L2 distance between ``T(exp(i . d_xx) d_x^k u+)(t)`` and its ``t -> 0`` limit.

    Meshless on both sides; the window covers the limit's support ``2 supp(u+^)``
    plus ``halo`` on each side.
    """
    if not 0 < t <= 1:
        raise ValueError("small-time defect is defined for t in (0, 1]")
    if profile.is_zero:
        return 0.0
    a, b = profile.support
    x = np.arange(2 * a - halo, 2 * b + halo + spacing, spacing)
    transformed = TransformedField(lambda s, y: free_evolve_profile(profile, s, y, k=k))(t, x)
    diff = transformed - small_time_limit(profile, x, k, convention)
    return float(np.sqrt(np.trapezoid(np.abs(diff) ** 2, x)))


def _fd4(func, x0, h):
    """Fourth-order central first and second derivatives of ``func`` at ``x0``."""
    fm2, fm1, f0, fp1, fp2 = (func(x0 + i * h) for i in (-2, -1, 0, 1, 2))
    d1 = (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * h)
    d2 = (-fm2 + 16 * fm1 - 30 * f0 + 16 * fp1 - fp2) / (12 * h * h)
    return f0, d1, d2


def nls_residual_pointwise(v: Evaluator, t: float, x, M: float, sign: int = 1, h: float = 1e-3) -> np.ndarray:
    """``i v_t + v_xx + (sign/2t)(|v|^2 - 2M) v`` by finite differences of a meshless field."""
    x = np.asarray(x, dtype=float)
    f0, vt, _ = _fd4(lambda s: v(s, x), t, h * t)
    _, _, vxx = _fd4(lambda y: v(t, y), x, h)
    return 1j * vt + vxx + sign / (2 * t) * (np.abs(f0) ** 2 - 2 * M) * f0


def schro_residual_pointwise(psi: Evaluator, t: float, x, M: float, sign: int = 1, h: float = 1e-3) -> np.ndarray:
    """``i psi_t + psi_xx + (sign/2)(|psi|^2 - 2M/t) psi`` by finite differences."""
    x = np.asarray(x, dtype=float)
    f0, pt, _ = _fd4(lambda s: psi(s, x), t, h * t)
    _, _, pxx = _fd4(lambda y: psi(t, y), x, h)
    return 1j * pt + pxx + 0.5 * sign * (np.abs(f0) ** 2 - 2 * M / t) * f0


def cubic_residual_pointwise(u: Evaluator, t: float, x, sign: int = 1, h: float = 1e-3) -> np.ndarray:
    """``i u_t + u_xx + (sign/2)|u|^2 u`` by finite differences."""
    return schro_residual_pointwise(u, t, x, 0.0, sign, h)
