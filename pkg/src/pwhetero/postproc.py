"""Band structures, gap analysis, densities of states and charge-density differences."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import ConvergenceError, ParameterError
from .kgrid import KPath
from .pseudo.kb import atomic_phases, real_spherical_harmonics
from .pwbasis import DensityGrid, lattice_bohr, write_cube
from .units import ANGSTROM_IN_BOHR, HARTREE_IN_EV

log = logging.getLogger(__name__)

DOS_SIGMA = 0.05  # eV
PDOS_WIDTH = 1.5  # Bohr
CDD_ISOVALUE = 0.004  # e / Angstrom^3
GAP_TOLERANCE = 1e-9  # eV; smaller gaps are degeneracies blurred by roundoff


# --- band structure ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BandStructure:
    """Eigenvalues along a path in eV, shifted so the Fermi level sits at 0."""

    path: KPath
    energies: np.ndarray
    n_electrons: float
    fermi_level: float = 0.0  # unshifted, eV

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        if e.ndim != 2 or e.shape[0] != len(self.path):
            raise ParameterError("energies must have one row per path point")
        if np.any(np.diff(e, axis=1) < 0):
            raise ParameterError("band energies must be ascending at every point")

    @property
    def n_bands(self):
        return self.energies.shape[1]

    def to_tsv(self):
        header = ["k_distance_inv_A"] + [f"band_{i + 1}_eV" for i in range(self.n_bands)]
        rows = ["\t".join(header)]
        for x, e in zip(self.path.cumulative_distance, self.energies):
            rows.append("\t".join([f"{x:.8f}"] + [f"{v:.8f}" for v in e]))
        return "\n".join(rows) + "\n"


def bands_from_potential(context, v_eff, path, fermi_level, n_electrons, n_bands):
    """Diagonalise a frozen potential at every path point (Hartree inputs)."""
    solved = context.solve(v_eff, path.points, n_bands)
    energies = np.array([vals for vals, _ in solved]) * HARTREE_IN_EV
    ef = fermi_level * HARTREE_IN_EV
    return BandStructure(path, energies - ef, float(n_electrons), ef)


def band_structure(result, path, n_bands=None, force=False):
    """Non-self-consistent bands along ``path`` at the SCF potential.

    The effective potential of the final SCF diagonalisation is reused
    unchanged, so a path point that coincides with a mesh point reproduces
    the SCF eigenvalues.

    Raises:
        ConvergenceError: if the SCF run did not converge and ``force`` is off.
    """
    if not result.converged and not force:
        raise ConvergenceError("refusing to compute bands from an unconverged SCF run (use force)")
    n_bands = n_bands or result.solution.n_bands
    return bands_from_potential(
        result.context, result.potential, path, result.solution.fermi_level,
        result.solution.n_electrons, n_bands,
    )


# --- gap analysis -----------------------------------------------------------


def point_label(path, index):
    """Node letter on a node, otherwise the bracketed segment, e.g. '(G--K)'."""
    nodes = path.node_indices
    if index in nodes:
        return path.labels[nodes.index(index)]
    for s in range(len(nodes) - 1):
        if nodes[s] < index < nodes[s + 1]:
            return f"({path.labels[s]}--{path.labels[s + 1]})"
    raise ParameterError(f"index {index} outside the path")


def position_label(path, vbm_index, cbm_index):
    """Location of a gap in table notation.

    Direct gaps give the single point label. Indirect gaps join the two
    extrema: two nodes as 'M-G', a node and an off-node point as 'M+(G--K)'
    (node first), two off-node points as '(G--K)+(K--M)'.
    """
    a = point_label(path, vbm_index)
    if vbm_index == cbm_index:
        return a
    b = point_label(path, cbm_index)
    a_node = not a.startswith("(")
    b_node = not b.startswith("(")
    if a_node and b_node:
        return f"{a}-{b}"
    if b_node and not a_node:
        a, b = b, a
    return f"{a}+{b}"


@dataclass(frozen=True)
class GapReport:
    """Band gap over the sampled path.

    ``vbm``/``cbm`` are (path index, fractional k, label). ``gap`` is in meV.
    """

    gap: float
    vbm: tuple
    cbm: tuple
    direct: bool
    position: str

    @property
    def metallic(self):
        return self.gap == 0.0

    @property
    def kind(self):
        if self.metallic:
            return "Metallic"
        return "Direct" if self.direct else "Indirect"


def analyze_gap(bands: BandStructure):
    """Locate the VBM and CBM of a spin-degenerate band structure.

    Ties go to the earlier path index. Gaps below ``GAP_TOLERANCE`` count as
    zero so that exactly degenerate levels are not reported as tiny gaps.
    """
    ne = bands.n_electrons
    if abs(ne - round(ne)) > 1e-9 or int(round(ne)) % 2:
        raise ParameterError(f"gap analysis needs an even electron count, got {ne:g}")
    n_occ = int(round(ne)) // 2
    if not 1 <= n_occ < bands.n_bands:
        raise ParameterError(f"need at least {n_occ + 1} bands for {ne:g} electrons")
    valence = bands.energies[:, n_occ - 1]
    conduction = bands.energies[:, n_occ]
    iv = int(np.argmax(valence))
    ic = int(np.argmin(conduction))
    gap_ev = float(conduction[ic] - valence[iv])
    if gap_ev < GAP_TOLERANCE:
        gap_ev = 0.0
    path = bands.path
    return GapReport(
        gap=gap_ev * 1000.0,
        vbm=(iv, tuple(path.points[iv]), point_label(path, iv)),
        cbm=(ic, tuple(path.points[ic]), point_label(path, ic)),
        direct=iv == ic,
        position=position_label(path, iv, ic),
    )


# --- densities of states ----------------------------------------------------


def energy_grid(eigenvalues, sigma=DOS_SIGMA, step=None, pad=6.0):
    levels = np.concatenate([np.ravel(e) for e in eigenvalues])
    step = step or sigma / 5.0
    lo = math.floor((levels.min() - pad * sigma) / step) * step
    hi = math.ceil((levels.max() + pad * sigma) / step) * step
    return lo + step * np.arange(int(round((hi - lo) / step)) + 1)


def _broaden(energies, levels, weights, sigma):
    energies = np.asarray(energies, dtype=float)
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    x = (energies[:, None] - levels[None, :]) / sigma
    return norm * np.exp(-0.5 * x * x) @ weights


def dos(eigenvalues, weights, energies, sigma=DOS_SIGMA):
    """DOS(E) = sum_k w_k sum_n 2 g(E - eps_nk) with unit-area Gaussians g."""
    if not sigma > 0:
        raise ParameterError("DOS broadening must be positive")
    total = np.zeros(len(np.atleast_1d(energies)))
    for w, eps in zip(weights, eigenvalues):
        eps = np.ravel(eps)
        total += _broaden(energies, eps, np.full(eps.size, 2.0 * w), sigma)
    return total


def radial_gaussian_transform(l, q, width):
    """int_0^inf r^2 j_l(qr) r^l exp(-r^2/2a^2) dr = sqrt(pi/2) a^(2l+3) q^l exp(-q^2 a^2/2)."""
    q = np.asarray(q, dtype=float)
    return math.sqrt(math.pi / 2.0) * width ** (2 * l + 3) * q**l * np.exp(-0.5 * (q * width) ** 2)


def atomic_orbitals(basis, cell, width=PDOS_WIDTH, lmax=1):
    """Gaussian-radial orbitals r^l exp(-r^2/2a^2) Y_lm on every atom.

    Rows are normalised on the basis. Labels are (atom, l, m).
    """
    if lmax > 2:
        raise ParameterError("orbitals up to l=2 are supported")
    kpg = basis.kpg
    q = np.linalg.norm(kpg, axis=1)
    frac = cell.fractional
    rows, labels = [], []
    for atom in range(cell.natoms):
        phase = atomic_phases(basis, frac[atom])
        for l in range(lmax + 1):
            radial = radial_gaussian_transform(l, q, width)
            ylm = real_spherical_harmonics(l, kpg)
            for m, y in enumerate(ylm):
                row = ((-1j) ** l) * radial * y * phase
                norm = np.linalg.norm(row)
                if norm == 0:
                    raise ParameterError("orbital has no weight on this basis; raise the cutoff")
                rows.append(row / norm)
                labels.append((atom, l, m - l))
    return np.array(rows), tuple(labels)


def orthonormalize(vectors):
    """Symmetric (S^-1/2) orthonormalisation of the rows of ``vectors``."""
    s = vectors.conj() @ vectors.T
    w, u = eigh(s)
    if w.min() < 1e-10:
        raise ParameterError("projector orbitals are linearly dependent on this basis")
    inv_sqrt = (u / np.sqrt(w)) @ u.conj().T
    return inv_sqrt.T @ vectors


def projection_weights(projectors, psi):
    """|<p_i|psi_n>|^2 for projector rows and eigenvector columns.

    Projectors whose norm is off by more than 1e-8 are normalised with a
    warning.
    """
    p = np.asarray(projectors)
    norms = np.linalg.norm(p, axis=1)
    bad = np.abs(norms - 1.0) > 1e-8
    if np.any(bad):
        log.warning("normalising %d projector orbitals", int(bad.sum()))
        p = p / norms[:, None]
    return np.abs(p.conj() @ np.asarray(psi)) ** 2


def pdos(solution, cell, energies, sigma=DOS_SIGMA, width=PDOS_WIDTH, lmax=1, orthonormal=True):
    """Per-(atom, l) projected DOS on an energy grid in eV relative to E_F.

    The projector set is orthonormalised by default so that the weights of
    one state never sum to more than one.
    """
    ef = solution.fermi_level * HARTREE_IN_EV
    curves = {}
    for basis, w, eps, vecs in zip(solution.bases, solution.weights, solution.eigenvalues, solution.coefficients):
        orbitals, labels = atomic_orbitals(basis, cell, width, lmax)
        if orthonormal:
            orbitals = orthonormalize(orbitals)
        weights = projection_weights(orbitals, vecs)
        levels = eps * HARTREE_IN_EV - ef
        for row, (atom, l, _) in zip(weights, labels):
            curve = _broaden(energies, levels, 2.0 * w * row, sigma)
            key = (atom, l)
            curves[key] = curves.get(key, 0.0) + curve
    return curves


def curve_tsv(energies, columns):
    """Tab-separated (E, value...) rows; ``columns`` maps name -> values."""
    names = list(columns)
    lines = ["\t".join(["energy_eV"] + names)]
    for i, e in enumerate(energies):
        lines.append("\t".join([f"{e:.6f}"] + [f"{columns[n][i]:.8e}" for n in names]))
    return "\n".join(lines) + "\n"


# --- charge-density difference ----------------------------------------------


def charge_density_difference(bilayer: DensityGrid, top: DensityGrid, bottom: DensityGrid):
    """Delta rho = rho_bilayer - rho_top - rho_bottom on identical grids."""
    shape = np.shape(bilayer.values)
    for other in (top, bottom):
        if np.shape(other.values) != shape:
            raise ParameterError(f"grid mismatch: {np.shape(other.values)} vs {shape}")
        if not np.allclose(other.cell.lattice, bilayer.cell.lattice, atol=1e-10):
            raise ParameterError("densities belong to different cells")
    diff = np.asarray(bilayer.values) - np.asarray(top.values) - np.asarray(bottom.values)
    return DensityGrid(diff, bilayer.cell)


def write_cdd_cube(path, cdd: DensityGrid, isovalue=CDD_ISOVALUE, comment="charge density difference"):
    """Cube export (e/Bohr^3) with the recommended isovalue (e/Angstrom^3) in the header."""
    write_cube(path, cdd.cell, cdd.values, comment=comment, isovalue=isovalue)


def planar_average(density: DensityGrid):
    """Average over the in-plane axes: (z in Angstrom, value in e/Bohr^3)."""
    values = np.asarray(density.values)
    nz = values.shape[2]
    c = np.linalg.norm(lattice_bohr(density.cell)[2]) / ANGSTROM_IN_BOHR
    return np.arange(nz) * c / nz, values.mean(axis=(0, 1))
