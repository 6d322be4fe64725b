"""Integrable natural systems on flat tori.

Exact Poisson brackets of trigonometric observables, momentum-map strata of
separable systems, periodic cubical homology of sublevel sets of the
potential, symplectic orbits and minimal closed Jacobi geodesics.
"""

from .model import (
    EnergyLevel,
    PhasePoint,
    System,
    TorusModel,
    TrigPotential,
    example3,
    hamiltonian,
    jacobi_factor,
    load_system,
)
from .observables import Observable, involution_report, poisson_bracket, separable_integrals
from .homology import PeriodicCubicalComplex, betti, betti_scan, glue, glue_complex, rasterize_sublevel
from .strata import build_cell_complex, verify_nondegeneracy
from .dynamics import factor_period, integrate
from .geodesics import HomotopyClass, d_k_scan, flat_minimal_length, jacobi_minimal_geodesic

__version__ = "0.1.0"

__all__ = [
    "EnergyLevel", "PhasePoint", "System", "TorusModel", "TrigPotential", "example3", "hamiltonian",
    "jacobi_factor", "load_system", "Observable", "involution_report", "poisson_bracket",
    "separable_integrals", "PeriodicCubicalComplex", "betti", "betti_scan", "glue", "glue_complex",
    "rasterize_sublevel", "build_cell_complex", "verify_nondegeneracy", "factor_period", "integrate",
    "HomotopyClass", "d_k_scan", "flat_minimal_length", "jacobi_minimal_geodesic",
]
