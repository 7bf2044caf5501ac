"""Plane-wave basis sets, FFT grids and dual-space transforms.

Conventions
-----------
* Internal units are Bohr and Hartree; cutoffs are given in Rydberg, so a
  plane wave k+G is kept when |k+G|^2 (Bohr^-2) <= ecut_wfc (Ry).
* A coefficient vector ``c`` maps to the periodic field
  ``u(r) = sum_G c_G exp(iG.r)`` sampled on the FFT grid, so
  ``sum_G |c_G|^2 == mean_r |u(r)|^2`` (Parseval). A normalised Bloch orbital
  is ``u(r) exp(ik.r) / sqrt(Omega)``.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import ParameterError, ParseError
from .structure import Cell, reciprocal_lattice
from .units import ANGSTROM_IN_BOHR

log = logging.getLogger(__name__)


def lattice_bohr(cell):
    return np.asarray(cell.lattice) * ANGSTROM_IN_BOHR


def reciprocal_bohr(cell):
    return reciprocal_lattice(lattice_bohr(cell))


def _is_smooth(n):
    for p in (2, 3, 5):
        while n % p == 0:
            n //= p
    return n == 1


def good_fft_size(n):
    """Smallest 2,3,5-smooth integer >= n."""
    n = max(int(n), 1)
    while not _is_smooth(n):
        n += 1
    return n


def max_miller(cell, gmax):
    """Largest |m_i| of any G = sum m_i b_i with |G| <= gmax (Bohr^-1)."""
    norms = np.linalg.norm(lattice_bohr(cell), axis=1)
    return np.floor(gmax * norms / (2.0 * math.pi) + 1e-9).astype(int)


def fft_grid(cell, ecut_rho, ecut_wfc=None):
    """FFT dimensions holding every G with |G|^2 <= ecut_rho (Ry)."""
    if not ecut_rho > 0:
        raise ParameterError("ecut_rho must be positive")
    if ecut_wfc is not None and ecut_rho < 4.0 * ecut_wfc - 1e-12:
        log.warning(
            "ecut_rho=%g Ry is below 4*ecut_wfc=%g Ry; density products will alias",
            ecut_rho,
            4.0 * ecut_wfc,
        )
    nmax = max_miller(cell, math.sqrt(ecut_rho))
    if ecut_wfc is not None:
        nmax = np.maximum(nmax, max_miller(cell, math.sqrt(ecut_wfc)))
    return tuple(good_fft_size(2 * n + 1) for n in nmax)


class FFTGrid:
    """Real-space grid of a cell with cached reciprocal vectors (Bohr units)."""

    def __init__(self, cell, dims):
        self.cell = cell
        self.dims = tuple(int(n) for n in dims)
        self.lattice = lattice_bohr(cell)
        self.recip = reciprocal_lattice(self.lattice)
        self.volume = float(np.linalg.det(self.lattice))
        self.npoints = int(np.prod(self.dims))
        self.dv = self.volume / self.npoints

    @functools.cached_property
    def miller(self):
        """Integer frequencies of every grid point, shape (N1, N2, N3, 3)."""
        freqs = [np.rint(np.fft.fftfreq(n) * n).astype(int) for n in self.dims]
        return np.stack(np.meshgrid(*freqs, indexing="ij"), axis=-1)

    @functools.cached_property
    def gvectors(self):
        return self.miller @ self.recip

    @functools.cached_property
    def g2(self):
        return np.einsum("...i,...i->...", self.gvectors, self.gvectors)

    @functools.cached_property
    def gvectors_no_nyquist(self):
        """G with the unpaired Nyquist frequency of even axes set to zero.

        Spectral derivatives built from these are real antisymmetric
        operators on real fields.
        """
        m = self.miller.copy()
        for axis, n in enumerate(self.dims):
            if n % 2 == 0:
                m[..., axis][m[..., axis] == -n // 2] = 0
        return m @ self.recip

    @functools.cached_property
    def points(self):
        """Cartesian coordinates (Bohr) of the grid points, shape (N1, N2, N3, 3)."""
        axes = [np.arange(n) / n for n in self.dims]
        frac = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return frac @ self.lattice

    def to_fourier(self, field):
        """Fourier coefficients f_G with field(r) = sum_G f_G exp(iG.r)."""
        return scipy.fft.fftn(field) / self.npoints

    def from_fourier(self, coeffs):
        return scipy.fft.ifftn(coeffs) * self.npoints

    def integrate(self, field):
        return float(np.sum(field) * self.dv)

    def gradient(self, field):
        """Spectral Cartesian gradient of a real field, shape (3, N1, N2, N3)."""
        fg = self.to_fourier(field)
        g = self.gvectors_no_nyquist
        return np.stack([self.from_fourier(1j * g[..., a] * fg).real for a in range(3)])

    def divergence(self, vector_field):
        g = self.gvectors_no_nyquist
        acc = np.zeros(self.dims, dtype=complex)
        for a in range(3):
            acc += 1j * g[..., a] * self.to_fourier(vector_field[a])
        return self.from_fourier(acc).real


@dataclass(frozen=True)
class DensityGrid:
    """Electron density (electrons / Bohr^3) on the FFT grid of ``cell``."""

    values: np.ndarray
    cell: Cell

    @property
    def dims(self):
        return self.values.shape

    def total(self):
        vol = float(np.linalg.det(lattice_bohr(self.cell)))
        return float(self.values.sum() * vol / self.values.size)


@dataclass(frozen=True, eq=False)
class PlaneWaveBasis:
    """Plane waves k+G inside the wavefunction cutoff.

    ``gvectors`` holds Miller triples, ``kinetic`` the values 1/2|k+G|^2 in
    Hartree, ordered by kinetic energy and then lexicographically.
    """

    cell: Cell
    k: np.ndarray
    gvectors: np.ndarray
    kinetic: np.ndarray
    ecut_wfc: float
    fft_dims: tuple

    def __len__(self):
        return len(self.gvectors)

    @functools.cached_property
    def kpg(self):
        """Cartesian k+G (Bohr^-1)."""
        return (self.gvectors + self.k) @ reciprocal_bohr(self.cell)

    @functools.cached_property
    def grid_index(self):
        """Positions of the basis G in the C-ordered FFT array."""
        idx = np.mod(self.gvectors, self.fft_dims)
        return np.ravel_multi_index(idx.T, self.fft_dims)

    @property
    def volume(self):
        return float(np.linalg.det(lattice_bohr(self.cell)))

    def permuted(self, order):
        """Same basis with G vectors reordered (ordering-independence checks)."""
        order = np.asarray(order)
        return PlaneWaveBasis(
            self.cell, self.k, self.gvectors[order], self.kinetic[order], self.ecut_wfc, self.fft_dims
        )


def build_basis(cell, k, ecut_wfc, fft_dims=None):
    """All Miller triples with |k+G|^2 <= ecut_wfc (Ry, Bohr^-2)."""
    if not ecut_wfc > 0:
        raise ParameterError("ecut_wfc must be positive")
    k = np.asarray(k, dtype=float)
    recip = reciprocal_bohr(cell)
    kcart = k @ recip
    kmax = math.sqrt(ecut_wfc) + float(np.linalg.norm(kcart))
    nmax = max_miller(cell, kmax) + 1
    ranges = [np.arange(-n, n + 1) for n in nmax]
    miller = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
    kpg = (miller + k) @ recip
    kin = 0.5 * np.einsum("ij,ij->i", kpg, kpg)
    keep = kin <= 0.5 * ecut_wfc * (1.0 + 1e-12)
    miller, kin = miller[keep], kin[keep]
    order = np.lexsort((miller[:, 2], miller[:, 1], miller[:, 0], kin))
    if fft_dims is None:
        fft_dims = fft_grid(cell, 4.0 * ecut_wfc)
    fft_dims = tuple(int(n) for n in fft_dims)
    span = 2 * np.abs(miller).max(axis=0) + 1 if len(miller) else np.ones(3)
    if np.any(np.asarray(fft_dims) < span):
        raise ParameterError(f"FFT grid {fft_dims} cannot hold the basis (needs {tuple(span)})")
    return PlaneWaveBasis(cell, k, miller[order], kin[order], float(ecut_wfc), fft_dims)


def to_realspace(basis, coefficients):
    """Coefficient vector(s) on ``basis`` -> periodic field(s) on the FFT grid.

    Accepts shape (n,) or (nbands, n).
    """
    c = np.asarray(coefficients)
    if c.shape[-1] != len(basis):
        raise ParameterError(f"expected {len(basis)} coefficients, got {c.shape[-1]}")
    lead = c.shape[:-1]
    n = int(np.prod(basis.fft_dims))
    grid = np.zeros(lead + (n,), dtype=complex)
    grid[..., basis.grid_index] = c
    grid = grid.reshape(lead + tuple(basis.fft_dims))
    axes = tuple(range(len(lead), len(lead) + 3))
    return scipy.fft.ifftn(grid, axes=axes) * n


def to_reciprocal(basis, field):
    """Project periodic field(s) on the FFT grid back onto the basis."""
    f = np.asarray(field)
    if tuple(f.shape[-3:]) != tuple(basis.fft_dims):
        raise ParameterError(f"field shape {f.shape[-3:]} does not match grid {basis.fft_dims}")
    lead = f.shape[:-3]
    n = int(np.prod(basis.fft_dims))
    axes = tuple(range(len(lead), len(lead) + 3))
    fg = scipy.fft.fftn(f, axes=axes).reshape(lead + (n,)) / n
    return fg[..., basis.grid_index]


def structure_factor(cell, g):
    """S(G) = sum_atoms exp(-i G.tau), G Cartesian in inverse Angstrom.

    ``g`` may be a single vector or an array (..., 3).
    """
    g = np.asarray(g, dtype=float)
    phase = np.tensordot(g, np.asarray(cell.positions).T, axes=([-1], [0]))
    return np.exp(-1j * phase).sum(axis=-1)


def structure_factor_miller(cell, miller, species=None):
    """S(G) for integer G, optionally restricted to one element."""
    frac = cell.fractional
    if species is not None:
        frac = frac[[i for i, s in enumerate(cell.species) if s == species]]
    phase = 2.0 * math.pi * np.tensordot(miller, frac.T, axes=([-1], [0]))
    return np.exp(-1j * phase).sum(axis=-1)


# --- cube files -----------------------------------------------------------

_ATOMIC_NUMBERS = {"H": 1, "C": 6, "Al": 13, "Si": 14, "P": 15, "Ga": 31, "Ge": 32}


def write_cube(path, cell, values, comment="", isovalue=None):
    """Gaussian-cube style export (Bohr), z index fastest.

    The second comment line records the recommended isovalue when given.
    """
    values = np.asarray(values, dtype=float)
    dims = values.shape
    lattice = lattice_bohr(cell)
    lines = [comment or "pwhetero volumetric data"]
    second = "z-fastest; units bohr"
    if isovalue is not None:
        second += f"; isovalue {isovalue:g} e/A^3"
    lines.append(second)
    lines.append(f"{cell.natoms:5d} {0.0:12.6f} {0.0:12.6f} {0.0:12.6f}")
    for n, vec in zip(dims, lattice):
        step = vec / n
        lines.append(f"{n:5d} {step[0]:12.6f} {step[1]:12.6f} {step[2]:12.6f}")
    for sym, zval, pos in zip(cell.species, cell.valence_electrons, lattice_positions(cell)):
        z = _ATOMIC_NUMBERS.get(sym, 0)
        lines.append(f"{z:5d} {zval:12.6f} {pos[0]:12.6f} {pos[1]:12.6f} {pos[2]:12.6f}")
    flat = values.reshape(-1)
    body = []
    nz = dims[2]
    for start in range(0, flat.size, nz):
        row = flat[start:start + nz]
        for j in range(0, nz, 6):
            body.append(" ".join(f"{v:13.5e}" for v in row[j:j + 6]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines + body) + "\n")


def lattice_positions(cell):
    return np.asarray(cell.positions) * ANGSTROM_IN_BOHR


def read_cube(path):
    """Return (values, axes, natoms, header comment lines)."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    if len(raw) < 6:
        raise ParseError("truncated cube header", source=path)
    try:
        natoms = int(raw[2].split()[0])
        dims, axes = [], []
        for line in raw[3:6]:
            parts = line.split()
            dims.append(int(parts[0]))
            axes.append([float(x) for x in parts[1:4]])
        data = np.array(" ".join(raw[6 + natoms:]).split(), dtype=float)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed cube file: {exc}", source=path) from None
    if data.size != int(np.prod(dims)):
        raise ParseError(f"cube holds {data.size} values, header says {np.prod(dims)}", source=path)
    return data.reshape(dims), np.array(axes), natoms, raw[:2]
