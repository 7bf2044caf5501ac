"""Input decks in the pw.x namelist-and-card layout.

A deck is a sequence of namelists (``&NAME`` ... ``/``) holding
``key = value`` assignments, followed by cards whose header line names the
card and an optional unit or mode (``ATOMIC_POSITIONS (angstrom)``,
``K_POINTS {automatic}``). Besides &CONTROL, &SYSTEM and &ELECTRONS an
optional &HETERO namelist describes stacking recipes for the scan
workflows.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import MandatoryFieldError, ParameterError, ParseError
from ..kgrid import KPath, kpath
from ..pseudo.upf import parse_upf_name
from ..structure import Cell, hexagonal_lattice
from ..units import BOHR_IN_ANGSTROM

log = logging.getLogger(__name__)

CALCULATIONS = ("scf", "bands", "dos", "bind-scan", "strain-scan", "cdd")

KNOWN_KEYS = {
    "control": {
        "calculation", "outdir", "prefix", "pseudo_dir", "restart_mode", "verbosity",
        "title", "tprnfor", "tstress", "wf_collect",
    },
    "system": {
        "ibrav", "a", "b", "c", "celldm(1)", "celldm(3)", "nat", "ntyp", "ecutwfc", "ecutrho",
        "occupations", "smearing", "degauss", "input_dft", "vdw_corr", "nbnd", "london_s6",
        "london_rcut",
    },
    "electrons": {"conv_thr", "mixing_beta", "electron_maxstep", "mixing_mode", "diagonalization"},
    "hetero": {
        "top", "bottom", "pattern", "d", "d_min", "d_max", "d_step", "d_list", "strain_list",
        "mismatch_tol", "electrons", "path_points", "dos_sigma", "pdos_width", "cdd_isovalue",
        "dense_threshold", "vacuum_c",
    },
}
NAMELIST_ORDER = ("control", "system", "electrons", "hetero")
CARDS = ("ATOMIC_SPECIES", "ATOMIC_POSITIONS", "K_POINTS", "CELL_PARAMETERS")

_ASSIGN = re.compile(r"^\s*([A-Za-z_][\w()]*)\s*=\s*(.*)$")


@dataclass
class KPointsSpec:
    """``kind`` is 'automatic', 'crystal_b' or 'gamma'."""

    kind: str = "gamma"
    mesh: tuple = (1, 1, 1)
    shift: tuple = (0, 0, 0)
    nodes: list = field(default_factory=list)  # (label, (k1, k2, k3), count)


@dataclass
class Deck:
    control: dict = field(default_factory=dict)
    system: dict = field(default_factory=dict)
    electrons: dict = field(default_factory=dict)
    hetero: dict = field(default_factory=dict)
    species: list = field(default_factory=list)  # (symbol, mass, pseudo file)
    positions: list = field(default_factory=list)  # (symbol, x, y, z)
    positions_unit: str = "angstrom"
    kpoints: KPointsSpec = field(default_factory=KPointsSpec)
    cell_parameters: list | None = None
    cell_unit: str = "angstrom"
    source: str | None = None

    def __eq__(self, other):
        if not isinstance(other, Deck):
            return NotImplemented
        return serialize_deck(self) == serialize_deck(other)

    # --- resolved settings ---------------------------------------------------

    @property
    def calculation(self):
        return str(self.control.get("calculation", "scf")).lower()

    @property
    def prefix(self):
        return str(self.control.get("prefix", "pwscf"))

    @property
    def ecutwfc(self):
        return float(self.system["ecutwfc"])

    @property
    def ecutrho(self):
        return float(self.system.get("ecutrho", 4.0 * self.ecutwfc))

    @property
    def smearing(self):
        return str(self.system.get("smearing", "m-p")).lower()

    @property
    def degauss(self):
        return float(self.system.get("degauss", 0.0005))

    @property
    def conv_thr(self):
        return float(self.electrons.get("conv_thr", 1e-8))

    @property
    def mixing_beta(self):
        return float(self.electrons.get("mixing_beta", 0.7))

    @property
    def max_iter(self):
        return int(self.electrons.get("electron_maxstep", 100))

    @property
    def vdw(self):
        value = str(self.system.get("vdw_corr", "none")).lower()
        return value in ("grimme-d2", "dft-d", "d2")

    @property
    def functional(self):
        """'pbe' or 'pz'; taken from input_dft, else from the pseudopotential names."""
        dft = self.system.get("input_dft")
        if dft is not None:
            value = str(dft).lower()
            if value in ("pbe", "gga-pbe"):
                return "pbe"
            if value in ("pz", "lda", "sla+pz"):
                return "pz"
            raise ParameterError(f"input_dft={dft!r} is not supported (use 'pz' or 'pbe')")
        tags = set()
        for _, _, pseudo in self.species:
            try:
                tags.add(parse_upf_name(pseudo).xc_tag)
            except (ParseError, MandatoryFieldError):
                continue
        return "pbe" if tags == {"pbe"} else "pz"

    @property
    def kmesh(self):
        if self.kpoints.kind == "automatic":
            return tuple(self.kpoints.mesh)
        return (1, 1, 1)

    def lattice(self):
        ibrav = int(self.system.get("ibrav", 0))
        if ibrav == 4:
            a, c = self._a_and_c()
            return hexagonal_lattice(a, c)
        if ibrav == 1:
            a, _ = self._a_and_c(need_c=False)
            return np.eye(3) * a
        if ibrav == 0:
            if not self.cell_parameters:
                raise MandatoryFieldError("ibrav = 0 needs a CELL_PARAMETERS card")
            scale = 1.0
            if self.cell_unit == "bohr":
                scale = BOHR_IN_ANGSTROM
            elif self.cell_unit == "alat":
                scale, _ = self._a_and_c(need_c=False)
            return np.array(self.cell_parameters, dtype=float) * scale
        raise ParameterError(f"ibrav = {ibrav} is not supported (use 0, 1 or 4)")

    def _a_and_c(self, need_c=True):
        if "a" in self.system:
            a = float(self.system["a"])
        elif "celldm(1)" in self.system:
            a = float(self.system["celldm(1)"]) * BOHR_IN_ANGSTROM
        else:
            raise MandatoryFieldError("&SYSTEM needs 'a' (or celldm(1))")
        c = None
        if need_c:
            if "c" in self.system:
                c = float(self.system["c"])
            elif "celldm(3)" in self.system:
                c = float(self.system["celldm(3)"]) * a
            else:
                raise MandatoryFieldError("&SYSTEM needs 'c' (or celldm(3)) for ibrav = 4")
        return a, c

    def cell(self):
        """Cell from the ATOMIC_POSITIONS card."""
        lattice = self.lattice()
        symbols = [p[0] for p in self.positions]
        coords = np.array([p[1:] for p in self.positions], dtype=float).reshape(-1, 3)
        unit = self.positions_unit
        if unit == "crystal":
            coords = coords @ lattice
        elif unit == "bohr":
            coords = coords * BOHR_IN_ANGSTROM
        elif unit == "alat":
            coords = coords * np.linalg.norm(lattice[0])
        return Cell(lattice, symbols, coords)

    def pseudo_files(self):
        return {sym: pseudo for sym, _, pseudo in self.species}

    def band_path(self, lattice=None):
        """The crystal_b path, or None for other K_POINTS modes."""
        if self.kpoints.kind != "crystal_b":
            return None
        nodes = [(label, k) for label, k, _ in self.kpoints.nodes]
        counts = [count for _, _, count in self.kpoints.nodes[:-1]]
        return kpath(nodes, counts, lattice if lattice is not None else self.lattice())

    def with_overrides(self, overrides):
        """Copy with ``namelist.key=value`` (or bare ``key=value``) assignments applied."""
        deck = copy.deepcopy(self)
        for raw_key, raw_value in overrides.items():
            key = raw_key.strip().lower()
            value = _parse_value(str(raw_value)) if isinstance(raw_value, str) else raw_value
            if "." in key:
                nl, _, key = key.partition(".")
                if nl not in NAMELIST_ORDER:
                    raise ParameterError(f"unknown namelist {nl!r} in override {raw_key!r}")
            else:
                nl = next((n for n in NAMELIST_ORDER if key in KNOWN_KEYS[n]), None)
                if nl is None:
                    raise ParameterError(f"cannot place override {raw_key!r}; use namelist.key")
            getattr(deck, nl)[key] = value
        deck.validate()
        return deck

    def with_kmesh(self, mesh):
        deck = copy.deepcopy(self)
        deck.kpoints = KPointsSpec("automatic", tuple(int(m) for m in mesh), (0, 0, 0))
        return deck

    def validate(self):
        if self.calculation not in CALCULATIONS:
            raise ParameterError(
                f"calculation={self.calculation!r}; expected one of {', '.join(CALCULATIONS)}"
            )
        for key in ("ecutwfc",):
            if key not in self.system:
                raise MandatoryFieldError(f"&SYSTEM is missing mandatory key {key!r}")
        declared = {s for s, _, _ in self.species}
        used = {p[0] for p in self.positions}
        missing = sorted(used - declared)
        if missing:
            raise ParameterError(f"positions use undeclared species: {', '.join(missing)}")
        if self.positions:
            if "nat" in self.system and int(self.system["nat"]) != len(self.positions):
                raise ParameterError(f"nat = {self.system['nat']} but {len(self.positions)} positions given")
            if "ntyp" in self.system and int(self.system["ntyp"]) != len(self.species):
                raise ParameterError(f"ntyp = {self.system['ntyp']} but {len(self.species)} species given")
        elif not self.hetero:
            raise MandatoryFieldError("deck needs ATOMIC_POSITIONS or a &HETERO recipe")
        return self

    def digest(self):
        """sha256 of the canonical serialisation."""
        return hashlib.sha256(serialize_deck(self).encode()).hexdigest()


# --- parsing -------------------------------------------------------------------


def _strip_comment(line):
    out, quote = [], None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch in "!#":
            break
        out.append(ch)
    return "".join(out).strip()


def _split_assignments(text):
    """Split 'a = 1, b = 2,' on commas outside quotes."""
    parts, buf, quote = [], [], None
    for ch in text:
        if quote:
            buf.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "'\"":
            quote = ch
            buf.append(ch)
        elif ch == ",":
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return [p.strip() for p in parts if p.strip()]


def _parse_value(raw):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
        return raw[1:-1]
    low = raw.lower()
    if low in (".true.", "true", ".t."):
        return True
    if low in (".false.", "false", ".f."):
        return False
    try:
        if re.fullmatch(r"[+-]?\d+", raw):
            return int(raw)
        return float(low.replace("d", "e"))
    except ValueError:
        return raw


def parse_deck(source):
    """Parse deck text, or a path to a deck file.

    Raises:
        ParseError: syntax problems, with the offending line number.
        MandatoryFieldError: missing &CONTROL, &SYSTEM or mandatory keys.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        path = Path(source)
        text = path.read_text()
        name = str(path)
    else:
        text = str(source)
        name = None
    deck = Deck(source=name)
    lines = text.splitlines()
    seen = set()
    i = 0
    current = None
    current_line = None
    while i < len(lines):
        lineno = i + 1
        raw = lines[i]
        line = _strip_comment(raw)
        i += 1
        if not line:
            continue
        if current is not None:
            if line == "/":
                current = None
                continue
            if line.startswith("&"):
                raise ParseError(f"namelist &{current.upper()} not terminated before {line}", lineno, name)
            if line.upper().split()[0] in CARDS:
                raise ParseError(f"namelist &{current.upper()} not terminated before card", lineno, name)
            for part in _split_assignments(line):
                m = _ASSIGN.match(part)
                if not m:
                    raise ParseError(f"expected 'key = value', got {part!r}", lineno, name)
                key = m.group(1).lower()
                value = _parse_value(m.group(2))
                if key not in KNOWN_KEYS[current]:
                    log.warning("%s:%d: unknown key %r in &%s", name or "<deck>", lineno, key, current.upper())
                getattr(deck, current)[key] = value
            continue
        if line.startswith("&"):
            nl = line[1:].strip().lower()
            if nl not in NAMELIST_ORDER:
                raise ParseError(f"unknown namelist {line!r}", lineno, name)
            if nl in seen:
                raise ParseError(f"namelist {line!r} appears twice", lineno, name)
            seen.add(nl)
            current, current_line = nl, lineno
            continue
        header = line.split()[0].upper()
        if header not in CARDS:
            raise ParseError(f"unexpected line {raw.strip()!r}", lineno, name)
        option = _card_option(line)
        body = []
        while i < len(lines):
            nxt = lines[i]
            stripped = _strip_comment(nxt)
            if stripped and (stripped.split()[0].upper() in CARDS or stripped.startswith("&")):
                break
            if stripped:
                body.append((i + 1, nxt))
            i += 1
        _read_card(deck, header, option, body, lineno, name)
    if current is not None:
        raise ParseError(f"namelist &{current.upper()} is never terminated with '/'", current_line, name)
    if "control" not in seen:
        raise MandatoryFieldError("deck has no &CONTROL namelist")
    if "system" not in seen:
        raise MandatoryFieldError("deck has no &SYSTEM namelist")
    return deck.validate()


def _card_option(line):
    m = re.search(r"[({]\s*([\w-]+)\s*[)}]", line)
    if m:
        return m.group(1).lower()
    parts = line.split()
    return parts[1].lower() if len(parts) > 1 else None


def _read_card(deck, header, option, body, lineno, name):
    def floats(parts, n, at):
        try:
            return [float(x.lower().replace("d", "e")) for x in parts[:n]]
        except ValueError:
            raise ParseError(f"expected {n} numbers", at, name) from None

    if header == "ATOMIC_SPECIES":
        for at, raw in body:
            parts = _strip_comment(raw).split()
            if len(parts) != 3:
                raise ParseError("ATOMIC_SPECIES rows are 'symbol mass pseudo_file'", at, name)
            deck.species.append((parts[0], floats(parts[1:2], 1, at)[0], parts[2]))
    elif header == "ATOMIC_POSITIONS":
        unit = option or "alat"
        if unit not in ("angstrom", "crystal", "bohr", "alat"):
            raise ParseError(f"unsupported ATOMIC_POSITIONS unit {unit!r}", lineno, name)
        deck.positions_unit = unit
        for at, raw in body:
            parts = _strip_comment(raw).split()
            if len(parts) < 4:
                raise ParseError("ATOMIC_POSITIONS rows are 'symbol x y z'", at, name)
            deck.positions.append((parts[0], *floats(parts[1:4], 3, at)))
    elif header == "CELL_PARAMETERS":
        deck.cell_unit = option or "alat"
        rows = []
        for at, raw in body:
            rows.append(floats(_strip_comment(raw).split(), 3, at))
        if len(rows) != 3:
            raise ParseError("CELL_PARAMETERS needs three rows", lineno, name)
        deck.cell_parameters = rows
    elif header == "K_POINTS":
        kind = option or "tpiba"
        if kind == "gamma":
            deck.kpoints = KPointsSpec("gamma")
        elif kind == "automatic":
            if len(body) != 1:
                raise ParseError("K_POINTS automatic takes one line 'n1 n2 n3 s1 s2 s3'", lineno, name)
            at, raw = body[0]
            parts = _strip_comment(raw).split()
            if len(parts) != 6:
                raise ParseError("K_POINTS automatic takes 'n1 n2 n3 s1 s2 s3'", at, name)
            try:
                nums = [int(x) for x in parts]
            except ValueError:
                raise ParseError("K_POINTS automatic values must be integers", at, name) from None
            if any(s not in (0, 1) for s in nums[3:]) or any(n < 1 for n in nums[:3]):
                raise ParseError("mesh sizes must be positive and shifts 0 or 1", at, name)
            if any(nums[3:]):
                raise ParseError("shifted meshes are not supported; use shifts 0 0 0", at, name)
            deck.kpoints = KPointsSpec("automatic", tuple(nums[:3]), tuple(nums[3:]))
        elif kind == "crystal_b":
            if not body:
                raise ParseError("K_POINTS crystal_b needs a count line", lineno, name)
            at, raw = body[0]
            try:
                count = int(_strip_comment(raw))
            except ValueError:
                raise ParseError("expected the number of path nodes", at, name) from None
            if len(body) - 1 != count:
                raise ParseError(f"expected {count} path nodes, found {len(body) - 1}", at, name)
            nodes = []
            for at, raw in body[1:]:
                text, _, label = raw.partition("!")
                parts = text.split()
                if len(parts) < 4:
                    raise ParseError("crystal_b rows are 'k1 k2 k3 n_points [!label]'", at, name)
                k = tuple(floats(parts[:3], 3, at))
                try:
                    n = int(float(parts[3]))
                except ValueError:
                    raise ParseError("path point count must be an integer", at, name) from None
                label = label.strip() or f"P{len(nodes) + 1}"
                nodes.append((label.upper(), k, n))
            if len(nodes) < 2:
                raise ParseError("a crystal_b path needs at least two nodes", lineno, name)
            deck.kpoints = KPointsSpec("crystal_b", nodes=nodes)
        else:
            raise ParseError(f"unsupported K_POINTS mode {kind!r}", lineno, name)


# --- serialisation -------------------------------------------------------------


def _format_value(value):
    if isinstance(value, bool):
        return ".true." if value else ".false."
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return f"'{value}'"


def serialize_deck(deck: Deck):
    """Canonical text; parsing it gives back an equal deck."""
    out = []
    for nl in NAMELIST_ORDER:
        values = getattr(deck, nl)
        if not values and nl in ("hetero", "electrons"):
            continue
        out.append(f"&{nl.upper()}")
        for key in sorted(values):
            out.append(f"  {key} = {_format_value(values[key])}")
        out.append("/")
    if deck.cell_parameters:
        out.append(f"CELL_PARAMETERS ({deck.cell_unit})")
        for row in deck.cell_parameters:
            out.append("  " + " ".join(repr(float(x)) for x in row))
    if deck.species:
        out.append("ATOMIC_SPECIES")
        for sym, mass, pseudo in deck.species:
            out.append(f"  {sym} {float(mass)!r} {pseudo}")
    if deck.positions:
        out.append(f"ATOMIC_POSITIONS ({deck.positions_unit})")
        for sym, x, y, z in deck.positions:
            out.append(f"  {sym} {float(x)!r} {float(y)!r} {float(z)!r}")
    k = deck.kpoints
    if k.kind == "automatic":
        out.append("K_POINTS {automatic}")
        out.append("  " + " ".join(str(int(v)) for v in (*k.mesh, *k.shift)))
    elif k.kind == "crystal_b":
        out.append("K_POINTS {crystal_b}")
        out.append(f"  {len(k.nodes)}")
        for label, kk, n in k.nodes:
            out.append("  " + " ".join(repr(float(v)) for v in kk) + f" {int(n)} !{label}")
    else:
        out.append("K_POINTS {gamma}")
    return "\n".join(out) + "\n"


def band_path_or_default(deck, lattice, points_per_segment=20):
    path = deck.band_path(lattice)
    if path is not None:
        return path
    from ..kgrid import hexagonal_path

    return hexagonal_path(int(deck.hetero.get("path_points", points_per_segment)), lattice)


__all__ = [
    "CALCULATIONS",
    "Deck",
    "KPath",
    "KPointsSpec",
    "band_path_or_default",
    "parse_deck",
    "serialize_deck",
]
