"""Numerical laboratory for recovering a 1-periodic potential in an infinite
cylindrical waveguide from partial Dirichlet-to-Neumann data.

Fibered quasi-periodic forward solvers, complex-exponential probe fields with
explicit phase vectors, weighted-inequality checks, and a Fourier-extraction
reconstruction pipeline with a log-log stability sweep.
"""

__version__ = "0.1.0"

from .carleman import carleman_check, carleman_potential_check
from .cgo import CgoPhase, TorusLattice, cgo_field, make_phase, solve_remainder, symbol_gap
from .dnmap import assemble_dn, dn_difference_norm, full_norm_over_theta
from .fiber import Field, FiberOperator, assemble, fbg_forward, fbg_inverse, harmonic_extension
from .geometry import BoundaryArc, CrossSection, build_disk, face, poincare_constant
from .potential import (FrequencyLattice, PeriodicPotential, admissible_check,
                        fourier_coefficient_direct, h_minus_one_dual_oracle,
                        h_minus_one_lattice)
from .reconstruct import (ExtractionConfig, extract_coefficient, phi,
                          stability_sweep, sweep_lattice, synthesize)

__all__ = [
    "BoundaryArc", "CgoPhase", "CrossSection", "ExtractionConfig", "Field",
    "FiberOperator", "FrequencyLattice", "PeriodicPotential", "TorusLattice",
    "admissible_check", "assemble", "assemble_dn", "build_disk",
    "carleman_check", "carleman_potential_check", "cgo_field",
    "dn_difference_norm", "extract_coefficient", "face", "fbg_forward",
    "fbg_inverse", "fourier_coefficient_direct", "full_norm_over_theta",
    "h_minus_one_dual_oracle", "h_minus_one_lattice", "harmonic_extension",
    "make_phase", "phi", "poincare_constant", "solve_remainder",
    "stability_sweep", "sweep_lattice", "symbol_gap", "synthesize",
    "__version__",
]
