"""Scans over interlayer distance and strain, and the deck runner.

Every sweep row is an independent calculation: it builds its own cell,
Hamiltonian and initial density, so a row computed alone reproduces the
same row of a full sweep exactly. Rows may run in parallel; tables are
assembled afterwards in sorted order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import math
import platform
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import (
    ConvergenceError,
    DependencyError,
    GeometryError,
    ParameterError,
)
from ..kgrid import hexagonal_path
from ..postproc import (
    CDD_ISOVALUE,
    DOS_SIGMA,
    PDOS_WIDTH,
    analyze_gap,
    band_structure,
    bands_from_potential,
    charge_density_difference,
    curve_tsv,
    dos,
    energy_grid,
    pdos,
    planar_average,
    write_cdd_cube,
)
from ..pseudo.d2 import DEFAULT_R_CUTOFF, grimme_d2, load_d2_params
from ..pwbasis import DensityGrid
from ..scf.hamiltonian import DENSE_THRESHOLD
from ..scf.loop import KsContext, KsSolution, KsSystem, ScfOptions, atomic_wells_system, scf_loop
from ..structure import (
    LAYER_PRESETS,
    PATTERN_SHIFTS,
    Cell,
    apply_biaxial_strain,
    build_heterobilayer,
    layer_split,
)
from ..units import HARTREE_IN_EV
from . import plotting
from .deck import Deck, band_path_or_default, serialize_deck

log = logging.getLogger(__name__)

ELECTRON_MODES = ("ks", "model", "wells", "free", "none")
D_SCAN_DEFAULT = (2.5, 4.5, 0.2)
STRAIN_DEFAULT = (0.0, 0.02, 0.04, 0.06, 0.08)
MAX_STRAIN = 0.1

TABLE41_HEADER = (
    "Configuration",
    "E_b/Ge atom (meV)",
    "E_g (meV) with LDA*",
    "E_g (meV) with HSE*",
    "d (Å)",
)
TABLE42_HEADER = (
    "Interlayer distance, d(Å)",
    "Band Gap (meV)",
    "Position of Band Gap (1 st BZ)",
    "Type of Band Gap",
)


# --- structures ------------------------------------------------------------------


def tag_layers(cell):
    """Tag atoms 'bottom'/'top' by splitting at the widest gap in z.

    Only gaps inside the cell count; the vacuum wrapping through the cell
    boundary is never treated as the interlayer gap.
    """
    if cell.layers is not None:
        return cell
    if cell.natoms < 2:
        raise GeometryError("a bilayer needs at least two atoms")
    z = cell.positions[:, 2]
    order = np.argsort(z, kind="stable")
    gaps = np.diff(z[order])
    cut = int(np.argmax(gaps))
    top = set(order[cut + 1:].tolist())
    tags = ["top" if i in top else "bottom" for i in range(cell.natoms)]
    return Cell(cell.lattice, cell.species, cell.positions, cell.valence_electrons, tags)


def detect_pattern(cell):
    """Stacking pattern (I, II, III) of a tagged bilayer, or None if it matches none."""
    cell = tag_layers(cell)
    frac = cell.fractional
    low = {}
    for tag in ("bottom", "top"):
        idx = [i for i, t in enumerate(cell.layers) if t == tag]
        low[tag] = frac[min(idx, key=lambda i: cell.positions[i, 2])]
    shift = (low["top"][:2] - low["bottom"][:2]) % 1.0
    for name, (sx, sy) in PATTERN_SHIFTS.items():
        delta = (shift - np.array([sx, sy]) + 0.5) % 1.0 - 0.5
        if np.all(np.abs(delta) < 1e-3):
            return name
    return None


@dataclass(frozen=True)
class StructureRecipe:
    """A tagged bilayer whose top layer can be moved rigidly along z."""

    cell: Cell
    pattern: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "cell", tag_layers(self.cell))
        if self.pattern is None:
            object.__setattr__(self, "pattern", detect_pattern(self.cell))

    @classmethod
    def from_layers(cls, top, bottom, pattern="I", d=3.5, c=20.0, mismatch_tolerance=0.02):
        top = LAYER_PRESETS[top] if isinstance(top, str) else top
        bottom = LAYER_PRESETS[bottom] if isinstance(bottom, str) else bottom
        cell = build_heterobilayer(top, bottom, pattern, d, c, mismatch_tolerance)
        return cls(cell, str(pattern).upper())

    def _indices(self, tag):
        return [i for i, t in enumerate(self.cell.layers) if t == tag]

    @property
    def distance(self):
        """Height of the lowest top-layer atom over the lowest bottom-layer atom (Angstrom)."""
        z = self.cell.positions[:, 2]
        return float(z[self._indices("top")].min() - z[self._indices("bottom")].min())

    @property
    def n_top(self):
        return len(self._indices("top"))

    @property
    def area(self):
        return self.cell.in_plane_area

    @property
    def label(self):
        return f"Structure-{self.pattern}" if self.pattern else "Structure"

    def at(self, d):
        """The bilayer with interlayer distance ``d`` (Angstrom)."""
        if not d > 0:
            raise GeometryError(f"interlayer distance must be positive, got {d}")
        z = self.cell.positions[:, 2]
        bottom, top = self._indices("bottom"), self._indices("top")
        if d <= z[bottom].max() - z[bottom].min():
            raise GeometryError(f"layers overlap at d={d}")
        c = float(self.cell.lattice[2, 2])
        if z[top].max() - z[top].min() + d + z[bottom].max() - z[bottom].min() >= c:
            raise GeometryError(f"c={c} leaves no vacuum at d={d}")
        positions = np.array(self.cell.positions)
        positions[top, 2] += d - self.distance
        return Cell(self.cell.lattice, self.cell.species, positions, self.cell.valence_electrons, self.cell.layers)

    def strained(self, strain):
        return StructureRecipe(apply_biaxial_strain(self.cell, strain), self.pattern)

    def references(self):
        """(top, bottom) isolated layers in the bilayer's cell."""
        return layer_split(self.cell)


# --- numerical settings --------------------------------------------------------


@dataclass(frozen=True)
class RunSettings:
    """Everything besides geometry that defines one calculation.

    ``electrons`` selects the electronic model:
    'ks' full Kohn-Sham with Hartree and xc; 'model' the bare pseudopotential
    Hamiltonian without Hartree and xc (a cheap, density-independent band
    model); 'wells' one electron per atom in species-dependent Gaussian
    wells (a gapped synthetic model, see ``atomic_wells_system``); 'free'
    free electrons, which contribute only kinetic energy; 'none' no
    electrons at all, so the energy is the dispersion sum alone. Ion-ion
    Ewald energy is included only with 'ks' and 'model'.
    """

    options: ScfOptions = field(default_factory=ScfOptions)
    functional: str = "pz"
    dispersion: bool = True
    electrons: str = "ks"
    pseudo_files: dict = field(default_factory=dict)
    search_path: tuple = ()
    d2_cutoff: float = DEFAULT_R_CUTOFF
    n_bands: int | None = None

    def __post_init__(self):
        if self.electrons not in ELECTRON_MODES:
            raise ParameterError(f"electrons={self.electrons!r}; expected one of {', '.join(ELECTRON_MODES)}")
        if self.functional not in ("pz", "pbe"):
            raise ParameterError(f"functional={self.functional!r}; expected 'pz' or 'pbe'")

    def resolved(self):
        out = {
            "scf": self.options.resolved(),
            "functional": self.functional,
            "dispersion": "grimme-d2" if self.dispersion else "none",
            "electrons": self.electrons,
            "pseudo_files": dict(sorted(self.pseudo_files.items())),
            "search_path": [str(p) for p in self.search_path],
            "d2_cutoff_A": self.d2_cutoff,
            "n_bands": self.n_bands,
        }
        return out


def make_system(cell, settings: RunSettings):
    """KsSystem for ``cell`` under ``settings`` (None for electrons='none')."""
    params = load_d2_params() if settings.dispersion else None
    mode = settings.electrons
    if mode == "none":
        return None
    if mode in ("free", "wells"):
        system = KsSystem.free_electron(cell) if mode == "free" else atomic_wells_system(cell)
        return dataclasses.replace(system, dispersion=params, d2_cutoff=settings.d2_cutoff)
    extra = {} if mode == "ks" else {"hartree": False, "xc": "none"}
    kwargs = {"xc": settings.functional, "dispersion": params, "d2_cutoff": settings.d2_cutoff}
    kwargs.update(extra)
    return KsSystem.with_bundled_pseudos(cell, settings.pseudo_files, settings.search_path, **kwargs)


@dataclass(frozen=True, eq=False)
class PointResult:
    energy: float  # Hartree
    converged: bool
    iterations: int = 0
    scf: object = None


def run_point(cell, settings: RunSettings, keep=False):
    """Total energy of one geometry; ``keep`` retains the full ScfResult."""
    system = make_system(cell, settings)
    if system is None:
        if not settings.dispersion:
            return PointResult(0.0, True)
        return PointResult(grimme_d2(cell, load_d2_params(), settings.d2_cutoff), True)
    result = scf_loop(system, settings.options)
    return PointResult(result.total_energy, result.converged, result.iterations, result if keep else None)


def _bands_for(result, path, settings, force=False):
    ne = result.solution.n_electrons
    n_bands = settings.n_bands or max(result.solution.n_bands, int(math.ceil(ne / 2.0)) + 4)
    return band_structure(result, path, n_bands=n_bands, force=force)


def _map_rows(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- binding curve ----------------------------------------------------------------


def distance_list(d_min=D_SCAN_DEFAULT[0], d_max=D_SCAN_DEFAULT[1], d_step=D_SCAN_DEFAULT[2]):
    """Inclusive scan, rounded to 10 decimals so 2.5 + 5 * 0.2 prints as 3.5."""
    if not d_step > 0 or d_max < d_min:
        raise ParameterError("need d_step > 0 and d_max >= d_min")
    n = int(math.floor((d_max - d_min) / d_step + 1e-9)) + 1
    return tuple(round(d_min + i * d_step, 10) for i in range(n))


@dataclass(frozen=True)
class BindingRow:
    d: float
    energy: float  # Hartree
    e_b_atom: float  # meV per top-layer atom
    e_b_area: float  # meV per Angstrom^2
    converged: bool = True
    iterations: int = 0


def parabolic_minimum(rows):
    """Vertex of the parabola through the three lowest converged rows.

    Falls back to the lowest row when the three points do not bracket a
    minimum. Returns (d, E_b per atom) or None with fewer than three rows.
    """
    good = [r for r in rows if r.converged and math.isfinite(r.e_b_atom)]
    if len(good) < 3:
        return None
    low = sorted(good, key=lambda r: (r.e_b_atom, r.d))[:3]
    d = np.array([r.d for r in low])
    e = np.array([r.e_b_atom for r in low])
    a, b, c = np.polyfit(d, e, 2)
    if a > 0:
        d_star = -b / (2.0 * a)
        if d.min() <= d_star <= d.max():
            return float(d_star), float(c - b * b / (4.0 * a))
    log.warning("no bracketed minimum among the three lowest rows; reporting the lowest sample")
    return float(low[0].d), float(low[0].e_b_atom)


@dataclass(frozen=True)
class BindingCurve:
    """Binding energies E_b = E_bilayer - E_top - E_bottom (negative = bound)."""

    rows: tuple
    reference_energies: tuple  # (top, bottom), Hartree
    n_top: int
    area: float  # Angstrom^2
    label: str = "Structure"

    @property
    def minimum(self):
        return parabolic_minimum(self.rows)

    def to_tsv(self):
        lines = ["d_A\tE_total_Ha\tE_b_per_atom_meV\tE_b_per_area_meV_per_A2\tconverged"]
        for r in self.rows:
            lines.append(
                f"{r.d:.4f}\t{r.energy:.10f}\t{r.e_b_atom:.6f}\t{r.e_b_area:.8f}\t{'yes' if r.converged else 'no'}"
            )
        return "\n".join(lines) + "\n"


def binding_row(recipe, d, settings, e_refs, n_top, area):
    try:
        point = run_point(recipe.at(d), settings)
    except ConvergenceError as exc:
        log.warning("d=%.3f: %s", d, exc)
        return BindingRow(float(d), math.nan, math.nan, math.nan, False)
    delta_mev = (point.energy - sum(e_refs)) * HARTREE_IN_EV * 1000.0
    return BindingRow(float(d), point.energy, delta_mev / n_top, delta_mev / area, point.converged, point.iterations)


def binding_curve(recipe: StructureRecipe, d_list, settings: RunSettings, threads=1):
    """E_b per top-layer atom and per in-plane area at each distance.

    The two isolated-layer references are computed once, in the bilayer's
    cell with the same settings, and shared by every row.

    Raises:
        ConvergenceError: if a reference layer does not converge.
    """
    d_list = sorted({float(d) for d in d_list})
    if len(d_list) < 3:
        raise ParameterError("a binding curve needs at least three distances")
    top, bottom = recipe.references()
    refs = []
    for part in (top, bottom):
        point = run_point(part, settings)
        if not point.converged:
            raise ConvergenceError("isolated-layer reference did not converge")
        refs.append(point.energy)
    n_top, area = recipe.n_top, recipe.area
    rows = _map_rows(lambda d: binding_row(recipe, d, settings, refs, n_top, area), d_list, threads)
    return BindingCurve(tuple(rows), tuple(refs), n_top, area, recipe.label)


def table41_tsv(entries):
    """Rows of (configuration, E_b per atom meV, gap meV or None, d Angstrom)."""
    lines = ["\t".join(TABLE41_HEADER)]
    for name, e_b, gap, d in entries:
        gap_text = "n/a" if gap is None else f"{gap:.1f}"
        lines.append(f"{name}\t{e_b:.4f}\t{gap_text}\tn/a\t{d:.2f}")
    return "\n".join(lines) + "\n"


# --- gap tables -------------------------------------------------------------------


@dataclass(frozen=True)
class GapRow:
    x: float  # distance (Angstrom) or strain
    gap: object  # GapReport, or None when the row failed
    energy: float = math.nan
    converged: bool = True


def gap_row(cell, x, settings, path, force=False):
    if settings.electrons == "none":
        raise ParameterError("band gaps need electrons (electrons='none' has no bands)")
    try:
        point = run_point(cell, settings, keep=True)
    except ConvergenceError as exc:
        log.warning("row %.4f: %s", x, exc)
        return GapRow(float(x), None, math.nan, False)
    if not point.converged and not force:
        return GapRow(float(x), None, point.energy, False)
    bands = _bands_for(point.scf, path, settings, force=True)
    return GapRow(float(x), analyze_gap(bands), point.energy, point.converged)


def _path_for(cell, path):
    return path if path is not None else hexagonal_path(20, cell.lattice)


def gap_vs_distance(recipe: StructureRecipe, d_list, settings: RunSettings, path=None, threads=1):
    """Gap, location and type at each distance, sorted by d."""
    d_list = sorted({float(d) for d in d_list})
    path = _path_for(recipe.cell, path)
    return _map_rows(lambda d: gap_row(recipe.at(d), d, settings, path), d_list, threads)


def table42_tsv(rows):
    lines = ["\t".join(TABLE42_HEADER)]
    for r in rows:
        if r.gap is None:
            lines.append(f"{r.x:.1f}\tn/a\tn/a\tNot converged")
        else:
            lines.append(f"{r.x:.1f}\t{r.gap.gap:.1f}\t{r.gap.position}\t{r.gap.kind}")
    return "\n".join(lines) + "\n"


def strain_sweep(recipe: StructureRecipe, strains, settings: RunSettings, path=None, threads=1):
    """Biaxial strain scan (positive = tensile); rows sorted by strain."""
    strains = sorted({float(s) for s in strains})
    for s in strains:
        if not -MAX_STRAIN < s < MAX_STRAIN:
            raise ParameterError(f"strain {s} outside ({-MAX_STRAIN}, {MAX_STRAIN})")

    def one(s):
        strained = recipe.strained(s)
        # the path is fractional, so each strained lattice gets its own metric
        p = path if path is not None else hexagonal_path(20, strained.cell.lattice)
        return gap_row(strained.cell, s, settings, p)

    return _map_rows(one, strains, threads)


def strain_tsv(rows):
    lines = ["strain\tgap_meV\tposition\ttype\tE_total_Ha"]
    for r in rows:
        if r.gap is None:
            lines.append(f"{r.x:.4f}\tn/a\tn/a\tNot converged\t{r.energy:.10f}")
        else:
            lines.append(f"{r.x:.4f}\t{r.gap.gap:.3f}\t{r.gap.position}\t{r.gap.kind}\t{r.energy:.10f}")
    return "\n".join(lines) + "\n"


# --- charge-density difference --------------------------------------------------


def cdd_from_density(recipe: StructureRecipe, bilayer_density, settings: RunSettings):
    """Delta rho against the two layers recomputed in the same cell."""
    if settings.electrons == "none":
        raise ParameterError("charge densities need electrons")
    parts = []
    for part in recipe.references():
        result = scf_loop(make_system(part, settings), settings.options)
        if not result.converged:
            raise ConvergenceError("isolated-layer SCF for the density difference did not converge")
        parts.append(DensityGrid(result.final_density.values, recipe.cell))
    bilayer = DensityGrid(np.asarray(getattr(bilayer_density, "values", bilayer_density)), recipe.cell)
    return charge_density_difference(bilayer, parts[0], parts[1])


# --- persistence ----------------------------------------------------------------


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_state(path, arrays):
    """npz archive with fixed zip timestamps, so identical arrays give identical bytes."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_state(path):
    with np.load(path, allow_pickle=False) as data:
        return {k: data[k] for k in data.files}


def _versions():
    import matplotlib
    import scipy

    return {
        "pwhetero": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


# --- deck runner -------------------------------------------------------------------


def _numbers(value):
    if isinstance(value, (int, float)):
        return (float(value),)
    return tuple(float(x) for x in str(value).replace(",", " ").split())


def settings_from_deck(deck: Deck, threads=1, search_path=()):
    h = deck.hetero
    nbnd = deck.system.get("nbnd")
    options = ScfOptions(
        ecut_wfc=deck.ecutwfc,
        ecut_rho=deck.ecutrho,
        kmesh=deck.kmesh,
        smearing=deck.smearing,
        degauss=deck.degauss,
        mixing_beta=deck.mixing_beta,
        conv_thr=deck.conv_thr,
        max_iter=deck.max_iter,
        n_bands=int(nbnd) if nbnd is not None else None,
        dense_threshold=int(h.get("dense_threshold", DENSE_THRESHOLD)),
        threads=threads,
    )
    paths = list(search_path)
    pseudo_dir = deck.control.get("pseudo_dir")
    if pseudo_dir:
        base = Path(deck.source).parent if deck.source else Path.cwd()
        paths.insert(0, str((base / str(pseudo_dir)).resolve()))
    return RunSettings(
        options=options,
        functional=deck.functional,
        dispersion=deck.vdw,
        electrons=str(h.get("electrons", "ks")).lower(),
        pseudo_files=deck.pseudo_files(),
        search_path=tuple(paths),
        n_bands=int(nbnd) if nbnd is not None else None,
    )


def recipe_from_deck(deck: Deck):
    """Positions from the deck if present, else the &HETERO layer recipe."""
    if deck.positions:
        return StructureRecipe(deck.cell(), deck.hetero.get("pattern"))
    h = deck.hetero
    for key in ("top", "bottom"):
        if key not in h:
            raise ParameterError(f"&HETERO needs {key!r} when the deck has no positions")
    _, c = deck._a_and_c()
    return StructureRecipe.from_layers(
        str(h["top"]),
        str(h["bottom"]),
        str(h.get("pattern", "I")),
        float(h.get("d", 3.5)),
        c,
        float(h.get("mismatch_tol", 0.02)),
    )


def deck_distances(deck):
    h = deck.hetero
    if "d_list" in h:
        return _numbers(h["d_list"])
    return distance_list(
        float(h.get("d_min", D_SCAN_DEFAULT[0])),
        float(h.get("d_max", D_SCAN_DEFAULT[1])),
        float(h.get("d_step", D_SCAN_DEFAULT[2])),
    )


def deck_strains(deck):
    if "strain_list" in deck.hetero:
        return _numbers(deck.hetero["strain_list"])
    return STRAIN_DEFAULT


class Run:
    """Output directory bookkeeping for one deck run."""

    def __init__(self, deck, workdir, kind, settings, overrides=None):
        self.deck = deck
        self.kind = kind
        self.settings = settings
        self.dir = Path(workdir) / deck.prefix
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.extra = {}
        self.overrides = dict(overrides or {})
        self.started = time.time()
        self.timings = {}

    def write(self, name, text):
        (self.dir / name).write_text(text)
        self.files.append(name)

    def figure(self, name, fn, *args, **kwargs):
        fn(*args, path=self.dir / name, **kwargs)
        self.files.append(name)

    def state(self, name, arrays):
        save_state(self.dir / name, arrays)
        self.files.append(name)

    def lap(self, label, t0):
        self.timings[label] = round(time.time() - t0, 3)

    def manifest(self, status="ok"):
        manifest = {
            "command": self.kind,
            "prefix": self.deck.prefix,
            "status": status,
            "deck_sha256": self.deck.digest(),
            "deck": serialize_deck(self.deck),
            "source": self.deck.source,
            "overrides": {k: str(v) for k, v in sorted(self.overrides.items())},
            "settings": self.settings.resolved(),
            "versions": _versions(),
            "started_unix": self.started,
            "timings_s": dict(self.timings, total=round(time.time() - self.started, 3)),
            "files": {name: _sha256(self.dir / name) for name in sorted(set(self.files))},
        }
        manifest.update(self.extra)
        path = self.dir / f"manifest.{self.kind}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        return manifest


def _require_state(run):
    path = run.dir / "state.npz"
    if not path.is_file():
        raise DependencyError(
            f"{run.kind} needs a prior scf run with prefix {run.deck.prefix!r} "
            f"(expected {path})"
        )
    state = load_state(path)
    return state


def _check_state_matches(state, cell, settings):
    same = (
        np.allclose(state["lattice"], cell.lattice, atol=1e-8)
        and state["positions"].shape == cell.positions.shape
        and np.allclose(state["positions"], cell.positions, atol=1e-8)
        and float(state["ecut_wfc"]) == settings.options.ecut_wfc
        and float(state["ecut_rho"]) == settings.options.resolved_ecut_rho
        and str(state["electrons"]) == settings.electrons
    )
    if not same:
        raise DependencyError(
            "the stored scf state belongs to a different geometry or cutoff; rerun scf"
        )


def _scf_arrays(result, cell, settings):
    sol = result.solution
    return {
        "density": result.final_density.values,
        "potential": result.potential,
        "fermi_level": np.array(sol.fermi_level),
        "n_electrons": np.array(sol.n_electrons),
        "converged": np.array(result.converged),
        "total_energy": np.array(result.total_energy),
        "kpoints": sol.kpoints,
        "weights": sol.weights,
        "eigenvalues": np.array(sol.eigenvalues),
        "lattice": np.asarray(cell.lattice),
        "positions": np.asarray(cell.positions),
        "species": np.array(cell.species),
        "ecut_wfc": np.array(settings.options.ecut_wfc),
        "ecut_rho": np.array(settings.options.resolved_ecut_rho),
        "electrons": np.array(settings.electrons),
    }


def _context_from_state(state, cell, settings):
    _check_state_matches(state, cell, settings)
    system = make_system(cell, settings)
    ctx = KsContext(system, settings.options)
    if tuple(ctx.grid.dims) != state["potential"].shape:
        raise DependencyError("stored potential grid does not match this deck's cutoffs")
    return ctx


def _energies_tsv(result):
    lines = ["component\tenergy_Ha"]
    for name, value in result.components.as_dict().items():
        lines.append(f"{name}\t{value:.12f}")
    lines.append(f"fermi_level\t{result.solution.fermi_level:.12f}")
    lines.append(f"smearing_correction\t{result.solution.smearing_correction:.12f}")
    lines.append(f"iterations\t{result.iterations}")
    lines.append(f"converged\t{'yes' if result.converged else 'no'}")
    return "\n".join(lines) + "\n"


def _gap_tsv(report):
    lines = ["quantity\tvalue"]
    lines.append(f"gap_meV\t{report.gap:.6f}")
    lines.append(f"position\t{report.position}")
    lines.append(f"type\t{report.kind}")
    lines.append(f"vbm_index\t{report.vbm[0]}")
    lines.append(f"cbm_index\t{report.cbm[0]}")
    return "\n".join(lines) + "\n"


def run_scf(run, cell):
    settings = run.settings
    t0 = time.time()
    if settings.electrons == "none":
        point = run_point(cell, settings)
        run.write("energies.tsv", f"component\tenergy_Ha\ndispersion\t{point.energy:.12f}\ntotal\t{point.energy:.12f}\n")
        run.extra["converged"] = True
        run.extra["total_energy_Ha"] = point.energy
        run.lap("scf", t0)
        return None
    result = scf_loop(make_system(cell, settings), settings.options)
    run.lap("scf", t0)
    run.write("scf.log.tsv", result.log_text())
    run.write("energies.tsv", _energies_tsv(result))
    run.state("state.npz", _scf_arrays(result, cell, settings))
    history = result.energy_history
    run.figure(
        "scf_convergence.png", plotting.plot_xy, range(1, len(history) + 1), history,
        xlabel="iteration", ylabel="E_total (Ha)", title=run.deck.prefix,
    )
    run.extra["converged"] = bool(result.converged)
    run.extra["iterations"] = result.iterations
    run.extra["total_energy_Ha"] = result.total_energy
    return result


def run_bands(run, cell, force=False):
    state = _require_state(run)
    if not bool(state["converged"]) and not force:
        raise ConvergenceError("the stored scf run did not converge; pass --force to use it anyway")
    ctx = _context_from_state(state, cell, run.settings)
    path = band_path_or_default(run.deck, cell.lattice)
    ne = float(state["n_electrons"])
    n_bands = run.settings.n_bands or max(state["eigenvalues"].shape[1], int(math.ceil(ne / 2.0)) + 4)
    t0 = time.time()
    bands = bands_from_potential(ctx, state["potential"], path, float(state["fermi_level"]), ne, n_bands)
    run.lap("bands", t0)
    run.write("bands.tsv", bands.to_tsv())
    run.write("bands.labels.tsv", path.to_text())
    report = None
    if abs(ne - round(ne)) < 1e-9 and int(round(ne)) % 2 == 0:
        report = analyze_gap(bands)
        run.write("gap.tsv", _gap_tsv(report))
        run.extra["gap_meV"] = report.gap
        run.extra["gap_position"] = report.position
    run.figure("bands.png", plotting.plot_bands, bands, title=run.deck.prefix)
    run.extra["path"] = {"labels": list(path.labels), "node_indices": list(path.node_indices), "points": len(path)}
    return bands, report


def run_dos(run, cell):
    state = _require_state(run)
    _check_state_matches(state, cell, run.settings)
    sigma = float(run.deck.hetero.get("dos_sigma", DOS_SIGMA))
    ef = float(state["fermi_level"]) * HARTREE_IN_EV
    levels = [e * HARTREE_IN_EV - ef for e in state["eigenvalues"]]
    grid = energy_grid(levels, sigma)
    curve = dos(levels, state["weights"], grid, sigma)
    run.write("dos.tsv", curve_tsv(grid, {"dos": curve}))
    run.figure("dos.png", plotting.plot_curves, grid, {"DOS": curve}, title=run.deck.prefix)
    run.extra["dos_sigma_eV"] = sigma
    return grid, curve


def run_pdos(run, cell):
    state = _require_state(run)
    ctx = _context_from_state(state, cell, run.settings)
    sigma = float(run.deck.hetero.get("dos_sigma", DOS_SIGMA))
    width = float(run.deck.hetero.get("pdos_width", PDOS_WIDTH))
    kpoints, weights = state["kpoints"], state["weights"]
    t0 = time.time()
    solved = ctx.solve(state["potential"], kpoints, state["eigenvalues"].shape[1])
    run.lap("diagonalize", t0)
    solution = KsSolution(
        kpoints, weights, tuple(ctx.basis(k)[0] for k in kpoints),
        tuple(s[0] for s in solved), tuple(s[1] for s in solved), (),
        float(state["fermi_level"]), float(state["n_electrons"]),
    )
    ef = solution.fermi_level * HARTREE_IN_EV
    levels = [e * HARTREE_IN_EV - ef for e in solution.eigenvalues]
    grid = energy_grid(levels, sigma)
    curves = pdos(solution, cell, grid, sigma, width)
    columns = {"total": dos(levels, weights, grid, sigma)}
    for (atom, l), values in sorted(curves.items()):
        columns[f"{cell.species[atom]}{atom + 1}_{'spd'[l]}"] = values
    run.write("pdos.tsv", curve_tsv(grid, columns))
    run.figure("pdos.png", plotting.plot_curves, grid, columns, title=run.deck.prefix)
    run.extra["pdos_width_bohr"] = width
    run.extra["dos_sigma_eV"] = sigma
    return grid, columns


def run_cdd(run, recipe):
    state = _require_state(run)
    _check_state_matches(state, recipe.cell, run.settings)
    isovalue = float(run.deck.hetero.get("cdd_isovalue", CDD_ISOVALUE))
    t0 = time.time()
    cdd = cdd_from_density(recipe, state["density"], run.settings)
    run.lap("references", t0)
    write_cdd_cube(run.dir / "cdd.cube", cdd, isovalue)
    run.files.append("cdd.cube")
    z, avg = planar_average(cdd)
    run.write("cdd_planar.tsv", "z_A\tdelta_rho_e_per_bohr3\n" + "".join(f"{a:.6f}\t{b:.10e}\n" for a, b in zip(z, avg)))
    run.figure("cdd_planar.png", plotting.plot_xy, z, avg, xlabel="z (Å)", ylabel="Δρ (e/Bohr³)", marker="", title=run.deck.prefix)
    run.extra["cdd_integral"] = cdd.total()
    run.extra["cdd_isovalue_e_per_A3"] = isovalue
    return cdd


def run_bind_scan(run, recipe, threads=1):
    d_list = deck_distances(run.deck)
    t0 = time.time()
    curve = binding_curve(recipe, d_list, run.settings, threads)
    run.lap("scan", t0)
    run.write("binding.tsv", curve.to_tsv())
    minimum = curve.minimum
    entries = []
    if minimum is not None:
        d_star, e_star = minimum
        gap = None
        if run.settings.electrons != "none":
            nearest = min((r for r in curve.rows if r.converged), key=lambda r: (abs(r.d - d_star), r.d))
            cell = recipe.at(nearest.d)
            row = gap_row(cell, nearest.d, run.settings, hexagonal_path(20, cell.lattice))
            gap = row.gap.gap if row.gap is not None else None
            run.extra["gap_distance_A"] = nearest.d
        entries.append((recipe.label, e_star, gap, d_star))
        run.extra["minimum"] = {"d_A": d_star, "E_b_per_atom_meV": e_star}
    run.write("table41.tsv", table41_tsv(entries))
    run.figure(
        "binding.png", plotting.plot_xy, [r.d for r in curve.rows], [r.e_b_atom for r in curve.rows],
        xlabel="d (Å)", ylabel="E_b per top-layer atom (meV)", title=recipe.label, highlight=minimum,
    )
    run.extra["d_list"] = list(d_list)
    run.extra["reference_energies_Ha"] = list(curve.reference_energies)
    return curve


def run_gap_scan(run, recipe, threads=1):
    d_list = deck_distances(run.deck)
    t0 = time.time()
    rows = gap_vs_distance(recipe, d_list, run.settings, None, threads)
    run.lap("scan", t0)
    run.write("gap_vs_d.tsv", table42_tsv(rows))
    run.figure(
        "gap_vs_d.png", plotting.plot_xy, [r.x for r in rows],
        [r.gap.gap if r.gap else math.nan for r in rows],
        xlabel="d (Å)", ylabel="band gap (meV)", title=recipe.label,
    )
    run.extra["d_list"] = list(d_list)
    run.extra["path"] = "G-K-M-G, 20 points per segment"
    return rows


def run_strain_scan(run, recipe, threads=1):
    strains = deck_strains(run.deck)
    t0 = time.time()
    rows = strain_sweep(recipe, strains, run.settings, None, threads)
    run.lap("scan", t0)
    run.write("strain.tsv", strain_tsv(rows))
    run.figure(
        "strain.png", plotting.plot_xy, [100 * r.x for r in rows],
        [r.gap.gap if r.gap else math.nan for r in rows],
        xlabel="biaxial strain (%)", ylabel="band gap (meV)", title=recipe.label,
    )
    run.extra["strain_list"] = list(strains)
    run.extra["path"] = "G-K-M-G, 20 points per segment"
    return rows


WORKFLOWS = ("scf", "bands", "dos", "pdos", "cdd", "bind-scan", "gap-scan", "strain-scan")


def run_deck(deck: Deck, workdir, kind=None, threads=1, force=False, overrides=None, search_path=()):
    """Run one workflow and write its files under ``workdir/prefix``.

    Returns the manifest dict (also written as ``manifest.<kind>.json``).
    Result files depend only on the inputs; wall-clock data lives in the
    manifest alone.

    Raises:
        DependencyError: a bands/dos/pdos/cdd run without a prior scf state.
        ConvergenceError: scf did not converge (its files are still written).
    """
    kind = kind or deck.calculation
    if kind not in WORKFLOWS:
        raise ParameterError(f"unknown workflow {kind!r}; choose from {', '.join(WORKFLOWS)}")
    settings = settings_from_deck(deck, threads=1 if kind.endswith("scan") else threads, search_path=search_path)
    run = Run(deck, workdir, kind, settings, overrides)
    recipe = recipe_from_deck(deck)
    cell = recipe.cell if deck.positions else recipe.at(float(deck.hetero.get("d", recipe.distance)))
    if kind in ("scf", "bands", "dos", "pdos", "cdd"):
        recipe = StructureRecipe(cell, recipe.pattern)
    run.extra["geometry"] = {
        "species": list(cell.species),
        "positions_A": np.asarray(cell.positions).round(10).tolist(),
        "lattice_A": np.asarray(cell.lattice).round(10).tolist(),
        "pattern": recipe.pattern,
    }
    if kind == "scf":
        result = run_scf(run, cell)
        if result is not None and not result.converged:
            run.manifest("not converged")
            raise ConvergenceError(
                f"scf did not converge in {result.iterations} iterations (files written to {run.dir})"
            )
    elif kind == "bands":
        run_bands(run, cell, force)
    elif kind == "dos":
        run_dos(run, cell)
    elif kind == "pdos":
        run_pdos(run, cell)
    elif kind == "cdd":
        run_cdd(run, recipe)
    elif kind == "bind-scan":
        run_bind_scan(run, recipe, threads)
    elif kind == "gap-scan":
        run_gap_scan(run, recipe, threads)
    elif kind == "strain-scan":
        run_strain_scan(run, recipe, threads)
    return run.manifest()


def result_files(manifest):
    """Names of the result files recorded in a manifest (the manifest itself excluded)."""
    return sorted(manifest["files"])


__all__ = [
    "BindingCurve",
    "BindingRow",
    "GapRow",
    "RunSettings",
    "StructureRecipe",
    "TABLE41_HEADER",
    "TABLE42_HEADER",
    "binding_curve",
    "detect_pattern",
    "distance_list",
    "gap_vs_distance",
    "make_system",
    "parabolic_minimum",
    "run_deck",
    "run_point",
    "strain_sweep",
    "table41_tsv",
    "table42_tsv",
    "tag_layers",
]
