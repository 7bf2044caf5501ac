"""Kohn-Sham Hamiltonian, occupations, Ewald energy and the SCF loop."""

from .ewald import default_eta, ewald_energy
from .hamiltonian import apply_hamiltonian, diagonalize, hamiltonian_matrix
from .loop import (
    EnergyComponents,
    KsContext,
    KsSolution,
    KsSystem,
    ScfOptions,
    ScfResult,
    gaussian_well_system,
    scf_loop,
    total_energy,
)
from .occupations import find_fermi, mix_density, mp_occupation, occupations

__all__ = [
    "EnergyComponents",
    "KsContext",
    "KsSolution",
    "KsSystem",
    "ScfOptions",
    "ScfResult",
    "apply_hamiltonian",
    "default_eta",
    "diagonalize",
    "ewald_energy",
    "find_fermi",
    "gaussian_well_system",
    "hamiltonian_matrix",
    "mix_density",
    "mp_occupation",
    "occupations",
    "scf_loop",
    "total_energy",
]
