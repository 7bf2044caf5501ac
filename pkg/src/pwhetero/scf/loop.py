"""Self-consistent Kohn-Sham loop: density -> potential -> bands -> density."""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ConfigurationError, ConsistencyError, ConvergenceError, ParameterError, ScfDivergenceError
from ..kgrid import KMesh, gamma_mesh, monkhorst_pack
from ..pseudo.d2 import DEFAULT_R_CUTOFF, D2Params, grimme_d2
from ..pseudo.kb import ProjectorSet, build_projectors
from ..pseudo.potential import load_pseudo, resolve_pseudo, vloc_reciprocal
from ..pwbasis import DensityGrid, FFTGrid, build_basis, fft_grid, structure_factor_miller, to_realspace
from ..structure import Cell
from ..units import ANGSTROM_IN_BOHR, RYDBERG_IN_HARTREE
from ..xc import MAX_CLAMPED_FRACTION, evaluate_xc, hartree
from .ewald import ewald_energy
from .hamiltonian import DENSE_THRESHOLD, diagonalize
from .occupations import find_fermi, mix_density, occupations, smearing_correction, smearing_name

log = logging.getLogger(__name__)

ROUTE_TOLERANCE = 1e-6  # Hartree
DIVERGENCE_WINDOW = 10


@dataclass(frozen=True)
class KsSystem:
    """What goes into the Hamiltonian.

    Each interaction can be switched off, so the same machinery covers the
    full pseudopotential calculation, a model potential in a box and the
    free-electron gas.

    Attributes:
        cell: geometry.
        pseudos: element -> Pseudopotential; required when ``local_potential``
            or ``nonlocal`` is on.
        xc: 'pz', 'pbe' or 'none'.
        external: optional callable mapping Cartesian grid points (Bohr,
            shape (..., 3)) to a potential in Hartree.
        n_electrons: defaults to the ionic valence charge of the cell.
    """

    cell: Cell
    pseudos: dict | None = None
    local_potential: bool = True
    nonlocal_potential: bool = True
    hartree: bool = True
    xc: str = "pz"
    ewald: bool = True
    dispersion: D2Params | None = None
    d2_cutoff: float = DEFAULT_R_CUTOFF
    external: Callable | None = None
    n_electrons: float | None = None

    def __post_init__(self):
        if self.xc not in ("pz", "pbe", "none"):
            raise ParameterError(f"unknown functional {self.xc!r}")
        if (self.local_potential or self.nonlocal_potential) and self.cell.natoms:
            missing = sorted(set(self.cell.species) - set(self.pseudos or {}))
            if missing:
                raise ConfigurationError(f"no pseudopotential for {', '.join(missing)}")
        if self.n_electrons is not None and self.n_electrons < 0:
            raise ParameterError("n_electrons must be non-negative")

    @property
    def electrons(self):
        return self.cell.n_electrons if self.n_electrons is None else float(self.n_electrons)

    @property
    def density_dependent(self):
        return self.hartree or self.xc != "none"

    @classmethod
    def free_electron(cls, cell, n_electrons=None):
        """Kinetic energy only: every potential term switched off."""
        return cls(
            cell,
            None,
            local_potential=False,
            nonlocal_potential=False,
            hartree=False,
            xc="none",
            ewald=False,
            dispersion=None,
            n_electrons=n_electrons,
        )

    @classmethod
    def with_bundled_pseudos(cls, cell, filenames=None, search_path=None, **kwargs):
        """Resolve a radial table per element (see ``resolve_pseudo``)."""
        filenames = filenames or {}
        pseudos = {}
        for el in dict.fromkeys(cell.species):
            pseudos[el] = load_pseudo(resolve_pseudo(el, filenames.get(el), search_path))
        return cls(cell, pseudos, **kwargs)


@dataclass(frozen=True)
class ScfOptions:
    """Numerical settings. Cutoffs, smearing width and threshold are in Rydberg."""

    ecut_wfc: float = 30.0
    ecut_rho: float | None = None
    kmesh: tuple | KMesh = (1, 1, 1)
    smearing: str = "m-p"
    degauss: float = 0.0005
    mixing_beta: float = 0.7
    conv_thr: float = 1e-8
    max_iter: int = 100
    n_bands: int | None = None
    dense_threshold: int = DENSE_THRESHOLD
    threads: int = 1
    fft_dims: tuple | None = None
    initial_width: float = 1.0  # Bohr

    def __post_init__(self):
        if not self.ecut_wfc > 0:
            raise ParameterError("ecut_wfc must be positive")
        if self.ecut_rho is not None and not self.ecut_rho > 0:
            raise ParameterError("ecut_rho must be positive")
        if not self.degauss > 0:
            raise ParameterError("degauss must be positive")
        if not 0 < self.mixing_beta <= 1:
            raise ParameterError("mixing_beta must lie in (0, 1]")
        if not self.conv_thr > 0 or self.max_iter < 1:
            raise ParameterError("conv_thr must be positive and max_iter at least 1")
        if self.threads < 1:
            raise ParameterError("threads must be at least 1")
        smearing_name(self.smearing)

    @property
    def resolved_ecut_rho(self):
        return 4.0 * self.ecut_wfc if self.ecut_rho is None else self.ecut_rho

    def mesh(self):
        if isinstance(self.kmesh, KMesh):
            return self.kmesh
        q = tuple(int(x) for x in self.kmesh)
        if q == (1, 1, 1):
            return gamma_mesh()
        return monkhorst_pack(*q)

    def resolved(self):
        """Every setting with defaults filled in (for manifests)."""
        d = dataclasses.asdict(self)
        d["ecut_rho"] = self.resolved_ecut_rho
        if isinstance(self.kmesh, KMesh):
            d["kmesh"] = [list(map(float, p)) for p in self.kmesh.points]
        else:
            d["kmesh"] = list(self.kmesh)
        return d


@dataclass(frozen=True)
class EnergyComponents:
    """Total-energy terms in Hartree."""

    kinetic: float = 0.0
    local: float = 0.0
    hartree: float = 0.0
    xc: float = 0.0
    nonlocal_: float = 0.0
    ewald: float = 0.0
    dispersion: float = 0.0

    @property
    def total(self):
        return math.fsum(dataclasses.astuple(self))

    def as_dict(self):
        d = {f.name.rstrip("_"): getattr(self, f.name) for f in dataclasses.fields(self)}
        d["total"] = self.total
        return d


@dataclass(frozen=True, eq=False)
class KsSolution:
    """Eigenstates on the k mesh. Eigenvectors are columns of ``coefficients[k]``."""

    kpoints: np.ndarray
    weights: np.ndarray
    bases: tuple
    eigenvalues: tuple
    coefficients: tuple
    occupations: tuple
    fermi_level: float
    n_electrons: float
    smearing_correction: float = 0.0

    @property
    def n_bands(self):
        return len(self.eigenvalues[0])

    def electron_count(self):
        return math.fsum(2.0 * w * float(np.sum(f)) for w, f in zip(self.weights, self.occupations))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    energy: float
    delta: float
    clamped_fraction: float
    route_difference: float


@dataclass(frozen=True, eq=False)
class ScfResult:
    converged: bool
    iterations: int
    total_energy: float
    components: EnergyComponents
    energy_history: tuple
    final_density: DensityGrid
    solution: KsSolution
    records: tuple
    potential: np.ndarray
    context: "KsContext" = field(repr=False, default=None)

    def log_text(self):
        """Tab-separated iteration log (energies in Hartree)."""
        lines = ["iteration\ttotal_energy_Ha\tdelta_E_Ha\tclamped_fraction\troute_difference_Ha"]
        for r in self.records:
            delta = "nan" if math.isnan(r.delta) else f"{r.delta:.6e}"
            lines.append(
                f"{r.iteration}\t{r.energy:.12f}\t{delta}\t{r.clamped_fraction:.6e}\t{r.route_difference:.3e}"
            )
        return "\n".join(lines) + "\n"


class KsContext:
    """Fixed ingredients of one calculation: FFT grid, local potential, bases.

    Bases and projectors are cached per k-point.
    """

    def __init__(self, system: KsSystem, options: ScfOptions):
        self.system = system
        self.options = options
        cell = system.cell
        dims = options.fft_dims or fft_grid(cell, options.resolved_ecut_rho, options.ecut_wfc)
        self.grid = FFTGrid(cell, dims)
        self.sigma = options.degauss * RYDBERG_IN_HARTREE
        self.v_fixed = self._fixed_potential()
        self._bases = {}

    def _fixed_potential(self):
        system, grid = self.system, self.grid
        v = np.zeros(grid.dims)
        cell = system.cell
        if system.local_potential and cell.natoms:
            q = np.sqrt(grid.g2)
            vg = np.zeros(grid.dims, dtype=complex)
            for el in dict.fromkeys(cell.species):
                form = vloc_reciprocal(system.pseudos[el], grid.volume, q)
                vg += structure_factor_miller(cell, grid.miller, el) * form
            v += grid.from_fourier(vg).real
        if system.external is not None:
            v += np.asarray(system.external(grid.points), dtype=float)
        return v

    def basis(self, k):
        key = tuple(np.round(np.asarray(k, float), 12))
        if key not in self._bases:
            basis = build_basis(self.system.cell, k, self.options.ecut_wfc, self.grid.dims)
            if self.system.nonlocal_potential and self.system.cell.natoms:
                proj = build_projectors(basis, self.system.cell, self.system.pseudos)
            else:
                proj = ProjectorSet.empty(len(basis))
            self._bases[key] = (basis, proj)
        return self._bases[key]

    def default_n_bands(self, kpoints):
        ne = self.system.electrons
        n = max(int(math.ceil(ne / 2.0)) + 4, int(math.ceil(0.6 * ne)))
        smallest = min(len(self.basis(k)[0]) for k in kpoints)
        if n > smallest:
            log.warning("n_bands %d exceeds the smallest basis (%d); using %d", n, smallest, smallest)
            n = smallest
        return n

    def initial_density(self):
        """Normalised Gaussians of width ``initial_width`` carrying the valence charge."""
        grid, cell = self.grid, self.system.cell
        ne = self.system.electrons
        if cell.natoms == 0 or cell.n_electrons <= 0:
            return np.full(grid.dims, ne / grid.volume)
        w = self.options.initial_width
        frac = cell.fractional
        phase = np.exp(-2j * math.pi * np.tensordot(grid.miller, frac.T, axes=([-1], [0])))
        ng = (phase @ np.asarray(cell.valence_electrons)) * np.exp(-0.5 * grid.g2 * w * w) / grid.volume
        n = grid.from_fourier(ng).real
        n = np.maximum(n, 0.0)
        return n * ne / (n.sum() * grid.dv)

    def solve(self, v_eff, kpoints, n_bands):
        """Diagonalise at each k; results are in k order regardless of threading."""

        def one(k):
            basis, proj = self.basis(k)
            vals, vecs = diagonalize(
                basis, v_eff, proj, n_bands, dense_threshold=self.options.dense_threshold
            )
            return vals, vecs

        if self.options.threads > 1 and len(kpoints) > 1:
            with ThreadPoolExecutor(max_workers=self.options.threads) as pool:
                return list(pool.map(one, kpoints))
        return [one(k) for k in kpoints]

    def density(self, kpoints, weights, vectors, occ):
        """n(r) = sum_k w_k sum_n 2 f_nk |u_nk(r)|^2 / Omega, summed in k order."""
        n = np.zeros(self.grid.dims)
        for k, w, vecs, f in zip(kpoints, weights, vectors, occ):
            basis, _ = self.basis(k)
            live = np.abs(f) > 0
            if not np.any(live):
                continue
            u = to_realspace(basis, vecs[:, live].T)
            n += (2.0 * w / self.grid.volume) * np.einsum("b,bxyz->xyz", f[live], np.abs(u) ** 2)
        return n

    def interaction(self, n):
        """Hartree and xc pieces of a density: (v_H + v_xc, E_H, E_xc, clamped fraction)."""
        v = np.zeros(self.grid.dims)
        e_h = e_xc = 0.0
        clamped = 0.0
        if self.system.hartree:
            vh, e_h = hartree(DensityGrid(n, self.system.cell), self.grid)
            v += vh
        if self.system.xc != "none":
            res = evaluate_xc(self.grid, n, self.system.xc)
            v += res.potential
            e_xc = res.total
            clamped = res.clamped_fraction
        return v, e_h, e_xc, clamped

    def ionic_energies(self):
        cell = self.system.cell
        e_ew = ewald_energy(cell, allow_charged=True) if self.system.ewald and cell.natoms else 0.0
        e_d2 = 0.0
        if self.system.dispersion is not None:
            e_d2 = grimme_d2(cell, self.system.dispersion, self.system.d2_cutoff)
        return e_ew, e_d2


def _band_terms(ctx, kpoints, weights, vectors, occ):
    """Kinetic and nonlocal expectation values summed over occupied states."""
    kin = nl = 0.0
    for k, w, vecs, f in zip(kpoints, weights, vectors, occ):
        basis, proj = ctx.basis(k)
        dens = np.abs(vecs) ** 2
        kin += 2.0 * w * float(f @ (basis.kinetic @ dens))
        if len(proj):
            ov = proj.vectors.conj() @ vecs
            nl += 2.0 * w * float(f @ (proj.couplings @ np.abs(ov) ** 2))
    return kin, nl


def total_energy(ctx, kpoints, weights, eigs, vecs, occ, v_int, n_out, ionic=None):
    """Total energy by two routes.

    Direct: E_kin + E_loc + E_H + E_xc + E_NL + E_Ewald + E_D2 with every
    term evaluated from the output states and density.
    Band route: sum_k w_k sum_n 2 f eps - int (v_H + v_xc)[n_in] n_out
    + E_H + E_xc + E_Ewald + E_D2, where ``v_int`` is the Hartree+xc
    potential the eigenvalues were computed with.

    Returns:
        (EnergyComponents of the direct route, band-route total).
    """
    e_ew, e_d2 = ctx.ionic_energies() if ionic is None else ionic
    _, e_h, e_xc, _ = ctx.interaction(n_out)
    kin, e_nl = _band_terms(ctx, kpoints, weights, vecs, occ)
    e_loc = ctx.grid.integrate(ctx.v_fixed * n_out)
    comps = EnergyComponents(kin, e_loc, e_h, e_xc, e_nl, e_ew, e_d2)
    band = math.fsum(2.0 * w * float(f @ e) for w, f, e in zip(weights, occ, eigs))
    band_route = math.fsum([band, -ctx.grid.integrate(v_int * n_out), e_h, e_xc, e_ew, e_d2])
    return comps, band_route


def scf_loop(system: KsSystem, options: ScfOptions | None = None, initial_density=None):
    """Iterate the Kohn-Sham equations to self-consistency.

    Convergence: |E_i - E_(i-1)| below ``conv_thr`` on two consecutive
    iterations. When the Hamiltonian does not depend on the density (no
    Hartree, no xc) one such step already means the fixed point is reached.

    Raises:
        ScfDivergenceError: the energy rose for ten iterations in a row.
        ConvergenceError: too many negative density points after mixing.
        ConsistencyError: the direct and band-energy totals disagree.
    """
    options = options or ScfOptions()
    ctx = KsContext(system, options)
    mesh = options.mesh()
    kpoints, weights = mesh.points, mesh.weights
    n_bands = options.n_bands or ctx.default_n_bands(kpoints)
    thr = options.conv_thr * RYDBERG_IN_HARTREE
    ne = system.electrons

    if initial_density is None:
        n_in = ctx.initial_density()
    else:
        values = getattr(initial_density, "values", initial_density)
        n_in = np.array(values, dtype=float)
        if n_in.shape != ctx.grid.dims:
            raise ParameterError(f"initial density grid {n_in.shape} does not match {ctx.grid.dims}")

    e_ew, e_d2 = ctx.ionic_energies()
    history, records = [], []
    below = 0
    rises = 0
    converged = False
    result_state = None
    for it in range(1, options.max_iter + 1):
        v_int, _, _, clamped = ctx.interaction(n_in)
        if clamped > MAX_CLAMPED_FRACTION:
            raise ConvergenceError(
                f"{100 * clamped:.2f}% of grid points had negative density; lower mixing_beta"
            )
        v_eff = ctx.v_fixed + v_int
        solved = ctx.solve(v_eff, kpoints, n_bands)
        eigs = [s[0] for s in solved]
        vecs = [s[1] for s in solved]
        mu = find_fermi(eigs, weights, ne, ctx.sigma, options.smearing)
        occ = [occupations(e, mu, ctx.sigma, options.smearing) for e in eigs]
        n_out = ctx.density(kpoints, weights, vecs, occ)

        comps, e_band_route = total_energy(ctx, kpoints, weights, eigs, vecs, occ, v_int, n_out, (e_ew, e_d2))
        e_direct = comps.total
        route_diff = abs(e_direct - e_band_route)
        if route_diff > ROUTE_TOLERANCE:
            raise ConsistencyError(
                f"total energy routes disagree by {route_diff:.3e} Ha at iteration {it}"
            )

        delta = abs(e_direct - history[-1]) if history else float("nan")
        if history and e_direct > history[-1]:
            rises += 1
        else:
            rises = 0
        history.append(e_direct)
        records.append(IterationRecord(it, e_direct, delta, clamped, route_diff))
        log.info("scf %3d  E=%.12f Ha  dE=%.3e", it, e_direct, delta)

        corr = smearing_correction(eigs, weights, mu, ctx.sigma, options.smearing)
        solution = KsSolution(
            np.array(kpoints), np.array(weights), tuple(ctx.basis(k)[0] for k in kpoints),
            tuple(eigs), tuple(vecs), tuple(occ), float(mu), ne, corr,
        )
        result_state = (comps, n_out, solution, v_eff)

        if history and not math.isnan(delta):
            below = below + 1 if delta < thr else 0
            needed = 2 if system.density_dependent else 1
            if below >= needed:
                converged = True
                break
        if rises >= DIVERGENCE_WINDOW:
            raise ScfDivergenceError(
                f"energy rose for {DIVERGENCE_WINDOW} consecutive iterations; "
                f"try a smaller mixing_beta (now {options.mixing_beta})"
            )
        n_in = mix_density(n_in, n_out, options.mixing_beta)

    comps, n_out, solution, v_eff = result_state
    if not converged:
        log.warning("SCF not converged after %d iterations", len(history))
    return ScfResult(
        converged,
        len(history),
        comps.total,
        comps,
        tuple(history),
        DensityGrid(n_out, system.cell),
        solution,
        tuple(records),
        v_eff,
        ctx,
    )


def gaussian_well_system(length=10.0, depth=2.0, width=1.2, n_electrons=2, xc="pz"):
    """Two electrons bound by a periodic Gaussian well in an empty cubic box.

    ``length`` and ``width`` are in Bohr, ``depth`` in Hartree. The well sits
    at the cell centre; nearest periodic images are included.
    """
    side = length / ANGSTROM_IN_BOHR
    cell = Cell(np.eye(3) * side)
    centre = np.full(3, 0.5 * length)
    shifts = np.array([[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]) * length

    def well(points):
        v = np.zeros(points.shape[:-1])
        for s in shifts:
            d = points - centre - s
            v -= depth * np.exp(-np.einsum("...i,...i->...", d, d) / (2.0 * width * width))
        return v

    return KsSystem(
        cell,
        None,
        local_potential=False,
        nonlocal_potential=False,
        hartree=True,
        xc=xc,
        ewald=False,
        external=well,
        n_electrons=n_electrons,
    )


# well depths (Hartree) of the synthetic tight-binding-like model; anion sites are deeper
WELL_DEPTHS = {"Ge": 1.5, "Si": 1.5, "Ga": 1.3, "Al": 1.2, "P": 1.8, "H": 1.5}


def atomic_wells(cell, depths=None, width=1.2):
    """Sum of Gaussian wells -D_s exp(-r^2 / 2 w^2) on every atom and its images.

    Returns a callable on Cartesian points in Bohr. ``width`` is in Bohr.
    """
    depths = dict(WELL_DEPTHS if depths is None else depths)
    missing = sorted(set(cell.species) - set(depths))
    if missing:
        raise ParameterError(f"no well depth for {', '.join(missing)}")
    lattice = np.asarray(cell.lattice) * ANGSTROM_IN_BOHR
    centres = np.asarray(cell.positions) * ANGSTROM_IN_BOHR
    reach = 8.0 * width
    heights = 1.0 / np.linalg.norm(np.linalg.inv(lattice), axis=0)
    n = [int(math.ceil(reach / h)) + 1 for h in heights]
    shifts = np.stack(
        np.meshgrid(*[np.arange(-m, m + 1) for m in n], indexing="ij"), axis=-1
    ).reshape(-1, 3) @ lattice
    depth = np.array([depths[s] for s in cell.species])

    def potential(points):
        v = np.zeros(points.shape[:-1])
        for centre, dep in zip(centres, depth):
            for s in shifts:
                d = points - (centre + s)
                r2 = np.einsum("...i,...i->...", d, d)
                v -= dep * np.exp(-r2 / (2.0 * width * width))
        return v

    return potential


def atomic_wells_system(cell, depths=None, width=1.2):
    """Non-interacting electrons, one per atom, in a lattice of Gaussian wells.

    A cheap gapped stand-in for a real material: each site carries one
    s-like bound level, so bands, gaps and their response to geometry follow
    tight-binding intuition, while the Hamiltonian is density independent.
    """
    return KsSystem(
        cell,
        None,
        local_potential=False,
        nonlocal_potential=False,
        hartree=False,
        xc="none",
        ewald=False,
        external=atomic_wells(cell, depths, width),
        n_electrons=float(cell.natoms),
    )
