"""Periodic cells, honeycomb layers and heterobilayer stacking."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, MismatchError, ParseError

log = logging.getLogger(__name__)

# valence electrons carried by the bundled model potentials
DEFAULT_VALENCE = {"Ge": 4.0, "Ga": 3.0, "Al": 3.0, "P": 5.0, "H": 1.0, "Si": 4.0}

# fractional in-plane honeycomb sites
SITE_A = (0.0, 0.0)
SITE_B = (1.0 / 3.0, 2.0 / 3.0)
SITE_HOLLOW = (2.0 / 3.0, 1.0 / 3.0)

PATTERN_SHIFTS = {
    "I": SITE_A,
    "II": SITE_B,
    "III": SITE_HOLLOW,
}

_WRAP_EPS = 1e-12


def _frozen(array, dtype=float):
    a = np.array(array, dtype=dtype)
    a.setflags(write=False)
    return a


def wrap_fractional(frac):
    """Fold fractional coordinates into [0, 1), snapping values within 1e-12 of 1 to 0."""
    frac = np.asarray(frac, dtype=float)
    frac = frac - np.floor(frac)
    frac[np.abs(frac - 1.0) < _WRAP_EPS] = 0.0
    frac[np.abs(frac) < _WRAP_EPS] = 0.0
    return frac


@dataclass(frozen=True)
class Cell:
    """Periodic simulation cell.

    ``lattice`` rows are a1, a2, a3 in Angstrom, ``positions`` are Cartesian
    Angstrom. Positions are folded into the home cell on construction.
    ``layers`` optionally tags every atom with a layer name (used by
    :func:`layer_split`).
    """

    lattice: np.ndarray
    species: tuple = ()
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    valence_electrons: tuple = ()
    layers: tuple | None = None

    def __post_init__(self):
        lattice = np.array(self.lattice, dtype=float)
        if lattice.shape != (3, 3):
            raise GeometryError(f"lattice must be 3x3, got {lattice.shape}")
        det = np.linalg.det(lattice)
        if not det > 0:
            raise GeometryError(f"lattice must have positive volume, det={det:.6g}")
        species = tuple(str(s) for s in self.species)
        positions = np.array(self.positions, dtype=float).reshape(-1, 3)
        if len(species) != len(positions):
            raise GeometryError(
                f"{len(species)} species but {len(positions)} positions"
            )
        valence = tuple(float(v) for v in self.valence_electrons)
        if not valence:
            try:
                valence = tuple(DEFAULT_VALENCE[s] for s in species)
            except KeyError as exc:
                raise GeometryError(f"no default valence for element {exc}") from None
        if len(valence) != len(species):
            raise GeometryError("valence_electrons must match species")
        if self.layers is not None and len(self.layers) != len(species):
            raise GeometryError("layers must tag every atom")
        frac = wrap_fractional(positions @ np.linalg.inv(lattice)) if len(species) else positions
        object.__setattr__(self, "lattice", _frozen(lattice))
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "positions", _frozen(frac @ lattice if len(species) else positions))
        object.__setattr__(self, "valence_electrons", valence)
        if self.layers is not None:
            object.__setattr__(self, "layers", tuple(self.layers))

    @classmethod
    def from_fractional(cls, lattice, species, fractional, **kwargs):
        lattice = np.asarray(lattice, dtype=float)
        frac = np.asarray(fractional, dtype=float).reshape(-1, 3)
        return cls(lattice, species, frac @ lattice, **kwargs)

    @property
    def natoms(self):
        return len(self.species)

    @property
    def volume(self):
        return float(np.linalg.det(self.lattice))

    @property
    def fractional(self):
        if not self.natoms:
            return np.zeros((0, 3))
        return wrap_fractional(self.positions @ np.linalg.inv(self.lattice))

    @property
    def n_electrons(self):
        return float(sum(self.valence_electrons))

    @property
    def in_plane_area(self):
        return float(np.linalg.norm(np.cross(self.lattice[0], self.lattice[1])))

    def with_atoms(self, species, positions, valence_electrons=(), layers=None):
        return Cell(self.lattice, species, positions, valence_electrons, layers)

    def translated(self, shift):
        """Rigidly translate every atom by a Cartesian shift (Angstrom)."""
        return dataclasses.replace(self, positions=self.positions + np.asarray(shift, float))


@dataclass(frozen=True)
class Layer:
    """Two-site honeycomb monolayer; site B sits ``buckling`` above site A."""

    species: tuple
    a: float
    buckling: float = 0.0
    name: str = ""

    def __post_init__(self):
        if len(self.species) != 2:
            raise GeometryError("a honeycomb layer has exactly two basis sites")
        if self.a <= 0:
            raise GeometryError("lattice constant must be positive")
        if self.buckling < 0:
            raise GeometryError("buckling height must be non-negative")
        object.__setattr__(self, "species", tuple(self.species))
        if not self.name:
            object.__setattr__(self, "name", "".join(dict.fromkeys(self.species)))


GERMANENE = Layer(("Ge", "Ge"), a=3.95, buckling=0.38, name="Ge")
GAP = Layer(("Ga", "P"), a=3.89, buckling=0.38, name="GaP")
ALP = Layer(("Al", "P"), a=3.95, buckling=0.0, name="AlP")

LAYER_PRESETS = {"Ge": GERMANENE, "GaP": GAP, "AlP": ALP}


def hexagonal_lattice(a, c):
    return np.array(
        [[a, 0.0, 0.0], [-a / 2.0, a * math.sqrt(3.0) / 2.0, 0.0], [0.0, 0.0, c]]
    )


def build_hexagonal_cell(a, c):
    """Empty hexagonal cell with a1=(a,0,0), a2=(-a/2, a*sqrt(3)/2, 0), a3=(0,0,c)."""
    if not (a > 0 and c > 0):
        raise GeometryError(f"hexagonal cell needs a > 0 and c > 0 (a={a}, c={c})")
    return Cell(hexagonal_lattice(a, c))


def reciprocal_lattice(cell_or_lattice):
    """Rows b_j with a_i . b_j = 2 pi delta_ij, in inverse length units of the input."""
    lattice = cell_or_lattice.lattice if isinstance(cell_or_lattice, Cell) else cell_or_lattice
    lattice = np.asarray(lattice, dtype=float)
    det = np.linalg.det(lattice)
    if abs(det) < 1e-14 * max(1.0, np.abs(lattice).max() ** 3):
        raise GeometryError("singular lattice has no reciprocal")
    return 2.0 * math.pi * np.linalg.inv(lattice).T


def lattice_mismatch(top, bottom):
    """Relative mismatch |a_top - a_bottom| / a_bottom."""
    return abs(top.a - bottom.a) / bottom.a


def build_heterobilayer(top, bottom, pattern, d, c=20.0, mismatch_tolerance=0.02):
    """Stack ``top`` over ``bottom`` in one of the patterns I, II, III.

    The bottom layer's site A sits at z=0 and its site B at z=buckling. The
    top layer is strained to the bottom lattice constant; its site A sits at
    height ``d`` above the bottom site-A plane and is placed in-plane over
    bottom site A (I), bottom site B (II) or the hollow site (III).
    """
    pattern = str(pattern).upper()
    if pattern not in PATTERN_SHIFTS:
        raise GeometryError(f"unknown stacking pattern {pattern!r}")
    if not d > 0:
        raise GeometryError(f"interlayer distance must be positive, got {d}")
    if d <= bottom.buckling:
        raise GeometryError(
            f"layers overlap: d={d} does not clear the substrate buckling {bottom.buckling}"
        )
    if not d + top.buckling + bottom.buckling < c:
        raise GeometryError(f"c={c} leaves no vacuum for d={d}")
    mismatch = lattice_mismatch(top, bottom)
    if mismatch > mismatch_tolerance:
        raise MismatchError(100 * mismatch, 100 * mismatch_tolerance)
    if mismatch > 0:
        log.info("straining %s by %.3f%% to match %s", top.name, 100 * mismatch, bottom.name)

    a = bottom.a
    lattice = hexagonal_lattice(a, c)
    sx, sy = PATTERN_SHIFTS[pattern]
    frac = [
        (SITE_A[0], SITE_A[1], 0.0),
        (SITE_B[0], SITE_B[1], bottom.buckling / c),
        (SITE_A[0] + sx, SITE_A[1] + sy, d / c),
        (SITE_B[0] + sx, SITE_B[1] + sy, (d + top.buckling) / c),
    ]
    species = bottom.species + top.species
    return Cell.from_fractional(
        lattice, species, frac, layers=("bottom", "bottom", "top", "top")
    )


def apply_biaxial_strain(cell, strain):
    """Scale a1 and a2 by (1 + strain); positive strain is tensile.

    Fractional coordinates are preserved, so z and a3 are untouched for a
    cell whose in-plane vectors have no z component.
    """
    if not strain > -1.0:
        raise GeometryError(f"biaxial strain must exceed -1, got {strain}")
    if strain == 0:
        return cell  # a rebuilt cell could differ in the last bit
    frac = cell.fractional
    lattice = np.array(cell.lattice)
    lattice[:2] *= 1.0 + strain
    return Cell(
        lattice,
        cell.species,
        frac @ lattice,
        cell.valence_electrons,
        cell.layers,
    )


def layer_split(cell):
    """Split a tagged two-layer cell into (upper layer, lower layer) cells."""
    if cell.layers is None or any(tag is None for tag in cell.layers):
        raise GeometryError("layer_split needs every atom tagged with a layer")
    tags = list(dict.fromkeys(cell.layers))
    if len(tags) != 2:
        raise GeometryError(f"expected two layers, found {len(tags)}: {tags}")

    def part(tag):
        idx = [i for i, t in enumerate(cell.layers) if t == tag]
        return Cell(
            cell.lattice,
            [cell.species[i] for i in idx],
            cell.positions[idx],
            [cell.valence_electrons[i] for i in idx],
            [tag] * len(idx),
        )

    parts = [part(t) for t in tags]
    parts.sort(key=lambda p: -p.positions[:, 2].mean())
    return parts[0], parts[1]


def to_positions_block(cell):
    """Deck-style ATOMIC_POSITIONS body: symbol and Cartesian Angstrom, 9 decimals."""
    lines = []
    for sym, xyz in zip(cell.species, cell.positions):
        # rounding first keeps roundoff like -1e-16 from printing as -0.000000000
        x, y, z = (round(float(v), 9) + 0.0 for v in xyz)
        lines.append(f"{sym} {x:.9f} {y:.9f} {z:.9f}")
    return "\n".join(lines) + "\n"


def parse_positions_block(text):
    """Inverse of :func:`to_positions_block`; returns (species, positions)."""
    species, positions = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("!")[0].split("#")[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 4:
            raise ParseError("expected 'symbol x y z'", line=lineno)
        try:
            xyz = [float(v) for v in parts[1:4]]
        except ValueError:
            raise ParseError(f"bad coordinate in {raw!r}", line=lineno) from None
        species.append(parts[0])
        positions.append(xyz)
    return species, np.array(positions, dtype=float).reshape(-1, 3)
