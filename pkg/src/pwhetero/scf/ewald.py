"""Ewald summation of point-ion Coulomb energies with a neutralising background."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

from ..errors import ParameterError
from ..pwbasis import lattice_bohr
from ..structure import reciprocal_lattice

_REAL_REACH = 6.5  # erfc(6.5) ~ 4e-20
_RECIP_REACH = 13.0  # exp(-(13)^2 / 4) ~ 4e-19


def default_eta(volume):
    """Splitting parameter balancing the real and reciprocal sums (Bohr^-1)."""
    return math.sqrt(math.pi) / volume ** (1.0 / 3.0)


def _shifts(lattice, reach):
    inv = np.linalg.inv(lattice)
    heights = 1.0 / np.linalg.norm(inv, axis=0)
    n = [int(math.ceil(reach / h)) + 1 for h in heights]
    axes = [np.arange(-m, m + 1) for m in n]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def ewald_energy(cell, charges=None, eta=None, allow_charged=False):
    """Ion-ion electrostatic energy per cell in Hartree.

    E = 1/2 sum'_{ijL} q_i q_j erfc(eta r)/r
      + (2 pi / Omega) sum_{G != 0} exp(-G^2 / 4 eta^2) / G^2 |S(G)|^2
      - eta / sqrt(pi) sum q_i^2 - pi Q^2 / (2 Omega eta^2)

    The last term is the interaction with a uniform compensating background.
    It vanishes for neutral sets of charges; a net charge Q is only accepted
    with ``allow_charged`` (the Kohn-Sham total energy relies on it because
    the ionic valence charge is neutralised by the electrons).

    Args:
        cell: the periodic cell (Angstrom geometry).
        charges: per-atom charges; defaults to ``cell.valence_electrons``.
        eta: splitting parameter in Bohr^-1; chosen automatically when None.
    """
    q = np.asarray(cell.valence_electrons if charges is None else charges, dtype=float)
    if q.shape != (cell.natoms,):
        raise ParameterError("one charge per atom is required")
    if cell.natoms == 0:
        return 0.0
    total_q = float(q.sum())
    if abs(total_q) > 1e-12 and not allow_charged:
        raise ParameterError(
            f"cell carries net charge {total_q:g}; pass allow_charged=True to use a background"
        )
    lattice = lattice_bohr(cell)
    volume = float(np.linalg.det(lattice))
    pos = cell.fractional @ lattice
    if eta is None:
        eta = default_eta(volume)
    if not eta > 0:
        raise ParameterError("eta must be positive")

    # real space
    shifts = _shifts(lattice, _REAL_REACH / eta) @ lattice
    diff = pos[None, :, :] - pos[:, None, :]
    qq = np.outer(q, q)
    e_real = 0.0
    step = max(1, 400_000 // max(1, cell.natoms**2))
    for start in range(0, len(shifts), step):
        vec = diff[None] + shifts[start:start + step, None, None, :]
        r = np.sqrt(np.einsum("lijx,lijx->lij", vec, vec))
        mask = r > 1e-10
        rr = np.where(mask, r, 1.0)
        e_real += float(np.sum(np.where(mask, qq * erfc(eta * rr) / rr, 0.0)))
    e_real *= 0.5

    # reciprocal space
    recip = reciprocal_lattice(lattice)
    gmax = _RECIP_REACH * eta
    lat_norms = np.linalg.norm(lattice, axis=1)
    nmax = [int(math.floor(gmax * n / (2.0 * math.pi))) + 1 for n in lat_norms]
    axes = [np.arange(-m, m + 1) for m in nmax]
    miller = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    g = miller @ recip
    g2 = np.einsum("ij,ij->i", g, g)
    keep = (g2 > 1e-20) & (g2 <= gmax * gmax)
    g, g2 = g[keep], g2[keep]
    s = np.exp(-1j * (g @ pos.T)) @ q
    e_recip = 2.0 * math.pi / volume * float(np.sum(np.exp(-g2 / (4.0 * eta * eta)) / g2 * np.abs(s) ** 2))

    e_self = -eta / math.sqrt(math.pi) * float(np.sum(q * q))
    e_background = -math.pi * total_q**2 / (2.0 * volume * eta * eta)
    return e_real + e_recip + e_self + e_background
