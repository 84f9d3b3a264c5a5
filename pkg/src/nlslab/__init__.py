"""Numerical laboratory for Dirac-train solutions of the 1-D cubic NLS.

The package builds the almost periodic Dirac-train wave plus a band-limited
scattering profile, evolves the pseudo-conformally transformed equation

    i v_t + v_xx + sign/(2t) (|v|^2 - 2M) v = 0,

constructs the final-state solution by Picard iteration of the Duhamel
functional, and measures the decay rates of every term.
"""

from .spectral import (
    ComplexField,
    SpectralGrid,
    free_propagate,
    from_fourier,
    l2_norm,
    lebesgue_l1,
    lebesgue_sup,
    make_grid,
    sobolev_norm,
    spatial_derivative,
    to_fourier,
)
from .profiles import DiracTrain, ModeTrace, ScatteringProfile
from .analysis import DecayFit, fit_decay

__version__ = "0.1.0"

__all__ = [
    "ComplexField",
    "DecayFit",
    "DiracTrain",
    "ModeTrace",
    "ScatteringProfile",
    "SpectralGrid",
    "fit_decay",
    "free_propagate",
    "from_fourier",
    "l2_norm",
    "lebesgue_l1",
    "lebesgue_sup",
    "make_grid",
    "sobolev_norm",
    "spatial_derivative",
    "to_fourier",
]
