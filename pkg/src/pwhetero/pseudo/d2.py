"""Grimme DFT-D2 pairwise dispersion energy with periodic images."""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, ParameterError, ParseError
from ..units import ANGSTROM_IN_BOHR

DEFAULT_R_CUTOFF = 500.0  # Angstrom


@dataclass(frozen=True)
class D2Params:
    """C6 in Hartree*Bohr^6, R0 in Bohr, global scale s6 and damping steepness."""

    c6: dict
    r0: dict
    s6: float = 0.75
    d_damp: float = 20.0

    def __post_init__(self):
        if not (self.s6 > 0 and self.d_damp > 0):
            raise ParameterError("s6 and d_damp must be positive")
        for el, c in self.c6.items():
            if c < 0:
                raise ParameterError(f"negative C6 for {el}")
        for el, r in self.r0.items():
            if not r > 0:
                raise ParameterError(f"non-positive R0 for {el}")

    def scaled(self, s6):
        return D2Params(dict(self.c6), dict(self.r0), s6, self.d_damp)


def load_d2_params(path=None):
    """Parse a parameter file: ``s6``/``d_damp`` lines plus ``symbol C6 R0`` rows."""
    if path is None:
        text = (importlib.resources.files("pwhetero") / "data" / "d2_params.txt").read_text()
        source = "d2_params.txt"
    else:
        text = Path(path).read_text()
        source = str(path)
    c6, r0, globals_ = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] in ("s6", "d_damp"):
                globals_[parts[0]] = float(parts[1])
            elif len(parts) == 3:
                c6[parts[0]] = float(parts[1])
                r0[parts[0]] = float(parts[2])
            else:
                raise ValueError
        except (ValueError, IndexError):
            raise ParseError(f"cannot parse {raw!r}", lineno, source) from None
    return D2Params(c6, r0, **globals_)


def _image_shifts(lattice, r_cutoff, periodic=(True, True, True)):
    """Integer translations n with any |n.A + d| <= r_cutoff for in-cell d."""
    inv = np.linalg.inv(lattice)
    # distance between lattice planes along each axis
    heights = 1.0 / np.linalg.norm(inv, axis=0)
    reach = [int(math.ceil(r_cutoff / h)) + 1 if p else 0 for h, p in zip(heights, periodic)]
    axes = [np.arange(-n, n + 1) for n in reach]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def grimme_d2(cell, params, r_cutoff=DEFAULT_R_CUTOFF, periodic=(True, True, False), chunk=200_000):
    """Dispersion energy per cell in Hartree.

    E = -s6 * 1/2 sum_{i,j,L}' f(R) C6_ij / R^6 over all pairs (i, j) and
    lattice translations L with R = |tau_j + L - tau_i| <= r_cutoff, excluding
    i = j at L = 0. The 1/2 counts each distinct pair once.

    Translations run only along the axes flagged in ``periodic``. The default
    treats the cell as a slab: the out-of-plane vacuum images are left out,
    which both matches an isolated bilayer and lets the in-plane sum converge
    quickly (its tail falls off as 1/R^4).
    """
    if not r_cutoff > 0:
        raise ParameterError("r_cutoff must be positive")
    missing = sorted({s for s in cell.species if s not in params.c6 or s not in params.r0})
    if missing:
        raise ConfigurationError(f"no D2 parameters for {', '.join(missing)}")
    if cell.natoms == 0:
        return 0.0
    lattice = np.asarray(cell.lattice) * ANGSTROM_IN_BOHR
    pos = np.asarray(cell.positions) * ANGSTROM_IN_BOHR
    rcut = r_cutoff * ANGSTROM_IN_BOHR
    c6 = np.array([params.c6[s] for s in cell.species])
    r0 = np.array([params.r0[s] for s in cell.species])
    c6ij = np.sqrt(np.outer(c6, c6))
    r0ij = r0[:, None] + r0[None, :]

    shifts = _image_shifts(lattice, rcut, periodic) @ lattice
    diff = pos[None, :, :] - pos[:, None, :]  # (i, j, 3): tau_j - tau_i
    total = 0.0
    nat = cell.natoms
    step = max(1, chunk // (nat * nat))
    for start in range(0, len(shifts), step):
        t = shifts[start:start + step]
        vec = diff[None, :, :, :] + t[:, None, None, :]
        r = np.sqrt(np.einsum("lijx,lijx->lij", vec, vec))
        mask = (r <= rcut) & (r > 1e-10)
        rr = np.where(mask, r, 1.0)
        damp = 1.0 / (1.0 + np.exp(-params.d_damp * (rr / r0ij - 1.0)))
        terms = np.where(mask, damp * c6ij / rr**6, 0.0)
        total += terms.sum()
    return -params.s6 * 0.5 * total
