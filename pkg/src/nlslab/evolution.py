"""Direct integration of the transformed equation

    i v_t + v_xx + (sigma/2t)(|v|^2 - 2M) v = 0

by Strang splitting.  The kinetic part is applied exactly in frequency space;
the nonlinear part conserves ``|v|`` pointwise, so its flow from ``t`` to
``t + h`` is the exact phase rotation
``exp(i sigma (|v|^2 - 2M) (ln(t + h) - ln t) / 2)``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .spectral import ComplexField, SpectralGrid, check_boundary_mass, fft_workers


class NumericalError(RuntimeError):
    """Non-finite values appeared during integration."""


def _nonlinear_phase(values: np.ndarray, t: float, h: float, M: float, sign: int) -> np.ndarray:
    dlog = np.log(t + h) - np.log(t)
    return values * np.exp(0.5j * sign * (np.abs(values) ** 2 - 2 * M) * dlog)


def _advance(grid: SpectralGrid, values: np.ndarray, t: float, t_next: float, steps: int, M: float,
             sign: int) -> np.ndarray:
    """``steps`` uniform Strang steps from ``t`` to ``t_next`` with merged half-steps."""
    if t <= 0 or t_next <= 0:
        raise ValueError("Strang integration requires positive times")
    h = (t_next - t) / steps
    xi2 = grid.xi**2
    half = np.exp(-0.5j * h * xi2)
    full = half * half
    workers = fft_workers()
    coeffs = sfft.fft(values, workers=workers) * half
    for k in range(steps):
        tk = t + k * h
        phys = sfft.ifft(coeffs, workers=workers)
        phys = _nonlinear_phase(phys, tk, h, M, sign)
        coeffs = sfft.fft(phys, workers=workers)
        coeffs *= full if k < steps - 1 else half
    out = sfft.ifft(coeffs, workers=workers)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite field after stepping from t={t} to t={t_next}")
    return out


def strang_step(v: ComplexField, t: float, h: float, M: float, sign: int = 1) -> ComplexField:
    """One Strang step of size ``h`` (negative ``h`` steps backward)."""
    if h == 0:
        return v
    return ComplexField(v.grid, _advance(v.grid, v.physical(), t, t + h, 1, M, sign))


def geometric_lattice(t0: float, t_end: float, rho: float) -> np.ndarray:
    """Snapshot times from ``t0`` to ``t_end`` in the order of integration.

    The lattice is ``min(t0, t_end) * rho**i`` closed by ``max(t0, t_end)``, so a
    backward run visits the same times as the forward run over the same span.
    """
    if t0 <= 0 or t_end <= 0:
        raise ValueError("lattice times must be positive")
    if rho <= 1:
        raise ValueError("lattice ratio rho must exceed 1")
    lo, hi = min(t0, t_end), max(t0, t_end)
    n = int(np.floor(np.log(hi / lo) / np.log(rho) + 1e-9))
    times = lo * rho ** np.arange(n + 1)
    if abs(times[-1] - hi) > 1e-12 * hi:
        times = np.append(times, hi)
    return times if t_end >= t0 else times[::-1].copy()


@dataclass
class SolverRun:
    """Snapshots of a direct solve, stored with increasing times."""

    grid: SpectralGrid
    times: np.ndarray
    values: np.ndarray  # shape (len(times), n), physical samples
    substeps: np.ndarray
    sign: int
    M: float
    boundary_mass: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times[0] <= 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be positive and strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("stored snapshot contains non-finite values")

    def __len__(self) -> int:
        return self.times.size

    def field(self, i: int) -> ComplexField:
        return ComplexField(self.grid, self.values[i])

    def snapshots(self):
        return [(float(t), self.field(i)) for i, t in enumerate(self.times)]


def evolve(
    initial: ComplexField,
    t0: float,
    t_end: float,
    M: float,
    sign: int = 1,
    rho: float = 2 ** 0.125,
    substeps: int = 8,
    h_max: float | None = None,
    monitor_modes: list[int] | None = None,
    monitor: bool = True,
    mass_limit: float = 1e-6,
) -> SolverRun:
    """Integrate from ``t0`` to ``t_end`` (forward or backward) on a geometric snapshot lattice.

    Each lattice interval uses ``max(substeps, ceil(|dt| / h_max))`` uniform
    Strang steps.  With ``monitor`` set, the edge-mass fraction (train modes
    ``monitor_modes`` removed) is checked at every snapshot.
    """
    grid = initial.grid
    lattice = geometric_lattice(t0, t_end, rho)
    values = np.empty((lattice.size, grid.n), dtype=complex)
    counts = np.zeros(lattice.size, dtype=int)
    masses = np.zeros(lattice.size)
    current = np.array(initial.physical(), dtype=complex)
    values[0] = current
    for i in range(lattice.size):
        if i > 0:
            dt = lattice[i] - lattice[i - 1]
            steps = substeps if h_max is None else max(substeps, int(np.ceil(abs(dt) / h_max)))
            current = _advance(grid, current, lattice[i - 1], lattice[i], steps, M, sign)
            values[i] = current
            counts[i] = steps
        if monitor:
            masses[i] = check_boundary_mass(ComplexField(grid, current), monitor_modes, mass_limit)
    if lattice[-1] < lattice[0]:
        order = slice(None, None, -1)
        lattice, values, counts, masses = lattice[order], values[order], counts[order], masses[order]
    return SolverRun(grid, lattice, values, counts, sign, M, masses)


def _time_derivative(run: SolverRun, i: int) -> np.ndarray:
    t = run.times
    if not 0 < i < len(run) - 1:
        raise IndexError("time derivative needs an interior snapshot")
    hm, hp = t[i] - t[i - 1], t[i + 1] - t[i]
    return (
        -hp / (hm * (hm + hp)) * run.values[i - 1]
        + (hp - hm) / (hm * hp) * run.values[i]
        + hm / (hp * (hm + hp)) * run.values[i + 1]
    )


def nls_residual(run: SolverRun, index: int) -> float:
    """L2 norm of the equation residual at an interior snapshot.

    Second-order three-point differences on the (non-uniform) lattice in time,
    spectral second derivative in space.
    """
    v = run.values[index]
    t = run.times[index]
    grid = run.grid
    vxx = grid.ifft(-(grid.xi**2) * grid.fft(v))
    res = 1j * _time_derivative(run, index) + vxx + run.sign / (2 * t) * (np.abs(v) ** 2 - 2 * run.M) * v
    return float(np.sqrt(grid.dx * np.sum(np.abs(res) ** 2)))


def dump_snapshots(run: SolverRun, directory: str, prefix: str = "snapshot") -> list[str]:
    """One CSV per snapshot with columns ``x, re, im`` (17 significant digits)."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, t in enumerate(run.times):
        path = os.path.join(directory, f"{prefix}_{i:04d}.csv")
        with open(path, "w", newline="") as fh:
            fh.write(f"# t={t:.17g}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "re", "im"])
            for x, v in zip(run.grid.x, run.values[i]):
                writer.writerow([f"{x:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}"])
        paths.append(path)
    return paths


def cascade_modes(modes, depth: int = 1) -> list[int]:
    """Lattice modes reached from ``modes`` by ``depth`` rounds of cubic interaction ``j1 - j2 + j3``."""
    current = set(int(j) for j in modes)
    for _ in range(depth):
        current |= {a - b + c for a in current for b in current for c in current}
    return sorted(current)
