"""Norm-conserving pseudopotentials in a plain radial-table format.

File layout (atomic units, ``#`` starts a comment)::

    element        Ge
    z_valence      4.0
    r_c            4.5
    channels       1          # number of separable projector channels
    l              0          # angular momentum of each channel
    wavefunctions  0          # optional: l of each pseudo-wavefunction column
    table
    r  v_local  beta_0 ...  psi_0 ...
    ...
    end
    couplings                 # one "l D_l" line per channel (Hartree)
    0  -0.8
    end
    norms                     # optional reference charge inside r_c, per l
    0  0.83
    end
"""

from __future__ import annotations

import importlib.resources
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import erf, spherical_jn

from ..errors import InputError, ParseError, SingularPointError

log = logging.getLogger(__name__)

TAIL_TOLERANCE = 1e-6
PROJECTOR_TOLERANCE = 1e-10
PSEUDO_PATH_ENV = "PWHETERO_PSEUDO_PATH"


class PseudoValidationError(InputError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Projector:
    l: int
    beta: np.ndarray
    coupling: float


@dataclass(frozen=True, eq=False)
class Pseudopotential:
    element: str
    z_valence: float
    r_grid: np.ndarray
    v_local: np.ndarray
    projectors: tuple = ()
    r_c: float = 0.0
    reference_norms: dict | None = None
    wavefunctions: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "r_grid", np.asarray(self.r_grid, dtype=float))
        object.__setattr__(self, "v_local", np.asarray(self.v_local, dtype=float))
        object.__setattr__(self, "projectors", tuple(self.projectors))
        validate(self)

    @property
    def short_range(self):
        """v_local(r) + z_valence / r."""
        return self.v_local + self.z_valence / self.r_grid


def _first_bad_row(mask):
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def validate(ps, row_lines=None):
    """Enforce the table invariants; ``row_lines`` maps table rows to file lines."""

    def line_of(row):
        if row is None or row_lines is None:
            return None
        return row_lines[row]

    r = ps.r_grid
    if r.ndim != 1 or r.size < 2:
        raise PseudoValidationError("radial grid needs at least two points")
    if len(ps.v_local) != len(r):
        raise PseudoValidationError("v_local length differs from the radial grid")
    if not r[0] > 0:
        raise PseudoValidationError("radial grid must start above zero", line_of(0))
    bad = _first_bad_row(np.diff(r) <= 0)
    if bad is not None:
        raise PseudoValidationError("radial grid is not strictly increasing", line_of(bad + 1))
    if ps.z_valence < 0:
        raise PseudoValidationError("z_valence must be non-negative")
    tail = r > ps.r_c
    if ps.z_valence > 0:
        coulomb = -ps.z_valence / r
        dev = np.abs(ps.v_local - coulomb) > TAIL_TOLERANCE * np.abs(coulomb)
        bad = _first_bad_row(tail & dev)
        if bad is not None:
            raise PseudoValidationError(
                f"v_local deviates from the -Z/r Coulomb tail at r={r[bad]:.6g} beyond r_c={ps.r_c}",
                line_of(bad),
            )
    seen = set()
    for proj in ps.projectors:
        if proj.l in seen:
            raise PseudoValidationError(
                f"multiple projectors in channel l={proj.l}; only one per channel is supported"
            )
        seen.add(proj.l)
        if len(proj.beta) != len(r):
            raise PseudoValidationError(f"projector l={proj.l} length differs from the radial grid")
        bad = _first_bad_row(tail & (np.abs(proj.beta) >= PROJECTOR_TOLERANCE))
        if bad is not None:
            raise PseudoValidationError(
                f"projector l={proj.l} does not vanish beyond r_c (r={r[bad]:.6g})", line_of(bad)
            )


# --- file I/O ---------------------------------------------------------------


def _strip(line):
    return line.split("#", 1)[0].strip()


def load_pseudo(path):
    """Read and validate a radial-table pseudopotential file."""
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    return parse_pseudo(lines, source=str(path))


def parse_pseudo(lines, source=None):
    header = {}
    rows, row_lines = [], []
    couplings, norms = {}, {}
    block = None
    for lineno, raw in enumerate(lines, start=1):
        line = _strip(raw)
        if not line:
            continue
        key = line.split()[0].lower()
        if block is None:
            if key in ("table", "couplings", "norms"):
                block = key
                continue
            parts = line.split()
            if len(parts) < 2 and key not in ("l", "wavefunctions"):
                raise ParseError(f"header line needs a value: {raw!r}", lineno, source)
            header[key] = (parts[1:], lineno)
            continue
        if key == "end":
            block = None
            continue
        parts = line.split()
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric entry in {block} block: {raw!r}", lineno, source) from None
        if block == "table":
            rows.append(values)
            row_lines.append(lineno)
        else:
            if len(values) != 2:
                raise ParseError(f"{block} lines are 'l value'", lineno, source)
            (couplings if block == "couplings" else norms)[int(values[0])] = values[1]
    if block is not None:
        raise ParseError(f"unterminated '{block}' block", len(lines), source)

    def need(key, cast):
        if key not in header:
            raise ParseError(f"missing header field '{key}'", None, source)
        vals, lineno = header[key]
        try:
            return cast(vals[0]), lineno
        except (ValueError, IndexError):
            raise ParseError(f"bad value for '{key}'", lineno, source) from None

    element, _ = need("element", str)
    z_val, _ = need("z_valence", float)
    r_c, _ = need("r_c", float)
    nchan, chan_line = need("channels", int)
    ls = [int(x) for x in header.get("l", ([], 0))[0]]
    if len(ls) != nchan:
        raise ParseError(f"'channels {nchan}' but {len(ls)} l values given", chan_line, source)
    wf_ls = [int(x) for x in header.get("wavefunctions", ([], 0))[0]]
    ncol = 2 + nchan + len(wf_ls)
    if not rows:
        raise ParseError("empty radial table", None, source)
    for values, lineno in zip(rows, row_lines):
        if len(values) != ncol:
            raise ParseError(f"expected {ncol} columns, found {len(values)}", lineno, source)
    table = np.array(rows)
    for l in ls:
        if l not in couplings:
            raise ParseError(f"no coupling given for channel l={l}", None, source)
    projectors = tuple(Projector(l, table[:, 2 + i], couplings[l]) for i, l in enumerate(ls))
    wavefunctions = {l: table[:, 2 + nchan + i] for i, l in enumerate(wf_ls)}

    fields = dict(
        element=element,
        z_valence=z_val,
        r_grid=table[:, 0],
        v_local=table[:, 1],
        projectors=projectors,
        r_c=r_c,
        reference_norms=norms or None,
        wavefunctions=wavefunctions,
    )
    try:
        validate(SimpleNamespace(**fields), row_lines)
    except PseudoValidationError as exc:
        raise ParseError(str(exc), exc.line, source) from None
    ps = Pseudopotential(**fields)
    return ps


def save_pseudo(ps, path, comment=None):
    wf_ls = sorted(ps.wavefunctions)
    out = ["# pwhetero radial pseudopotential table (bohr, hartree)"]
    if comment:
        out.extend(f"# {c}" for c in comment.splitlines())
    out.append(f"element        {ps.element}")
    out.append(f"z_valence      {ps.z_valence!r}")
    out.append(f"r_c            {ps.r_c!r}")
    out.append(f"channels       {len(ps.projectors)}")
    if ps.projectors:
        out.append("l              " + " ".join(str(p.l) for p in ps.projectors))
    if wf_ls:
        out.append("wavefunctions  " + " ".join(str(l) for l in wf_ls))
    out.append("table")
    cols = [ps.r_grid, ps.v_local] + [p.beta for p in ps.projectors]
    cols += [ps.wavefunctions[l] for l in wf_ls]
    for row in np.column_stack(cols):
        out.append(" ".join(f"{v:.17e}" for v in row))
    out.append("end")
    out.append("couplings")
    for p in ps.projectors:
        out.append(f"{p.l} {p.coupling!r}")
    out.append("end")
    if ps.reference_norms:
        out.append("norms")
        for l, v in sorted(ps.reference_norms.items()):
            out.append(f"{l} {v!r}")
        out.append("end")
    Path(path).write_text("\n".join(out) + "\n")


def bundled_pseudo_dir():
    return importlib.resources.files("pwhetero") / "data" / "pseudo"


def resolve_pseudo(element, filename=None, search_path=None):
    """Locate a radial table for ``element``.

    Looks for ``<stem>.psp`` (stem = UPF name without its extension) and then
    ``<element>.model.psp`` in the search path, ``$PWHETERO_PSEUDO_PATH`` and
    finally the bundled model directory.
    """
    dirs = [Path(p) for p in (search_path or [])]
    env = os.environ.get(PSEUDO_PATH_ENV)
    if env:
        dirs.extend(Path(p) for p in env.split(os.pathsep) if p)
    dirs.append(Path(str(bundled_pseudo_dir())))
    candidates = []
    if filename:
        stem = Path(filename).name
        if stem.lower().endswith(".upf"):
            stem = stem[:-4]
        candidates.append(f"{stem}.psp")
    candidates.append(f"{element}.model.psp")
    for name in candidates:
        for d in dirs:
            p = d / name
            if p.is_file():
                if filename and name != candidates[0]:
                    log.warning(
                        "UPF bodies are not parsed; using model table %s for %s", p, filename
                    )
                return p
    raise InputError(f"no pseudopotential table found for {element} ({filename})")


# --- analytic models --------------------------------------------------------


def log_grid(r_min=1e-6, r_max=30.0, step=0.004):
    n = int(math.ceil(math.log(r_max / r_min) / step)) + 1
    return r_min * np.exp(step * np.arange(n))


def coulomb_model(element, z_valence, r_grid=None):
    """Bare -Z/r potential without projectors (r_c = 0)."""
    r = log_grid() if r_grid is None else np.asarray(r_grid, float)
    return Pseudopotential(element, float(z_valence), r, -z_valence / r, (), 0.0)


def erf_model(
    element,
    z_valence,
    sigma,
    r_c,
    gauss_amplitude=0.0,
    gauss_width=0.5,
    projectors=(),
    r_grid=None,
):
    """Error-function-screened Coulomb potential with optional extras.

    v(r) = -Z erf(r/sigma)/r + A exp(-r^2 / (2 w^2)). ``projectors`` is a
    sequence of ``(l, width, coupling)``; each radial projector is
    r^l exp(-r^2 / (2 width^2)) normalised to unit norm.
    """
    r = log_grid() if r_grid is None else np.asarray(r_grid, float)
    v = -z_valence * erf(r / sigma) / r
    if gauss_amplitude:
        v = v + gauss_amplitude * np.exp(-(r**2) / (2.0 * gauss_width**2))
    projs = []
    for l, width, coupling in projectors:
        beta = r**l * np.exp(-(r**2) / (2.0 * width**2))
        norm = math.sqrt(trapezoid(beta**2 * r**2, r))
        beta = beta / norm
        beta[r > r_c] = 0.0
        projs.append(Projector(int(l), beta, float(coupling)))
    return Pseudopotential(element, float(z_valence), r, v, tuple(projs), float(r_c))


# --- checks -----------------------------------------------------------------


def radial_charge(wf, r, r_c):
    """4 pi int_0^rc |psi|^2 r^2 dr by trapezoidal quadrature on the mesh."""
    mask = r <= r_c
    rr = np.concatenate([[0.0], r[mask]])
    integrand = np.concatenate([[0.0], np.abs(wf[mask]) ** 2 * r[mask] ** 2])
    return 4.0 * math.pi * float(trapezoid(integrand, rr))


@dataclass(frozen=True)
class NormReport:
    deviations: dict
    unchecked: tuple
    tolerance: float

    @property
    def passed(self):
        return all(d < self.tolerance for d in self.deviations.values())


def check_norm_conservation(ps, pseudo_wf=None, tolerance=1e-3):
    """Per-channel |4 pi int_0^rc |psi_l|^2 r^2 dr - reference_l|."""
    wfs = ps.wavefunctions if pseudo_wf is None else pseudo_wf
    refs = ps.reference_norms or {}
    deviations, unchecked = {}, []
    for l, wf in sorted(wfs.items()):
        if l not in refs:
            unchecked.append(l)
            continue
        charge = radial_charge(np.asarray(wf, float), ps.r_grid, ps.r_c)
        deviations[l] = abs(charge - refs[l])
    return NormReport(deviations, tuple(unchecked), tolerance)


def log_derivative(radial_wf, r_grid, r):
    """(d psi/dr)/psi at the grid point nearest ``r`` (centred difference)."""
    r_grid = np.asarray(r_grid, float)
    wf = np.asarray(radial_wf, float)
    i = int(np.argmin(np.abs(r_grid - r)))
    if i == 0 or i == len(r_grid) - 1:
        raise SingularPointError("log derivative needs an interior grid point")
    if abs(wf[i]) < 1e-12:
        raise SingularPointError(f"wavefunction has a node at r={r_grid[i]:.6g}")
    h1 = r_grid[i] - r_grid[i - 1]
    h2 = r_grid[i + 1] - r_grid[i]
    # second-order centred difference on a non-uniform mesh
    deriv = (
        -h2 / (h1 * (h1 + h2)) * wf[i - 1]
        + (h2 - h1) / (h1 * h2) * wf[i]
        + h1 / (h2 * (h1 + h2)) * wf[i + 1]
    )
    return deriv / wf[i]


def _trim(r, integrand):
    """Drop the tail where the integrand is negligible."""
    mag = np.abs(integrand)
    peak = mag.max() if mag.size else 0.0
    if peak == 0.0:
        return r[:2], integrand[:2]
    last = np.flatnonzero(mag > 1e-16 * peak)[-1]
    stop = min(len(r), last + 2)
    return r[:stop], integrand[:stop]


def vloc_reciprocal(ps, volume, q):
    """Local potential form factor in Hartree for |G| values ``q`` (Bohr^-1).

    ``volume`` is the cell volume in Bohr^3 (or a :class:`Cell`). At q=0 the
    divergent Coulomb part is dropped and only the finite short-range
    integral is returned; the matching G=0 terms of the Hartree and Ewald
    energies are dropped/neutralised accordingly.
    """
    if hasattr(volume, "lattice"):
        from ..pwbasis import lattice_bohr

        volume = float(np.linalg.det(lattice_bohr(volume)))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    r = ps.r_grid
    bracket_r2 = ps.short_range * r**2
    r_t, f_t = _trim(r, bracket_r2)
    if len(r_t) == len(r) and abs(f_t[-1]) > 1e-8 * np.abs(f_t).max():
        log.warning("%s: short-range potential not decayed at the grid end", ps.element)
    rr = np.concatenate([[0.0], r_t])
    ff = np.concatenate([[0.0], f_t])
    out = np.empty_like(q)
    uq, inv = np.unique(np.round(q, 12), return_inverse=True)
    vals = np.empty_like(uq)
    for start in range(0, len(uq), 1024):
        qs = uq[start:start + 1024]
        kernel = np.sinc(np.outer(qs, rr) / math.pi)
        vals[start:start + 1024] = trapezoid(kernel * ff, rr, axis=1)
    vals *= 4.0 * math.pi / volume
    nz = uq > 0
    vals[nz] -= 4.0 * math.pi * ps.z_valence / (volume * uq[nz] ** 2)
    out = vals[inv].reshape(q.shape)
    return out


def projector_form_factor(ps, proj, q):
    """4 pi int r^2 j_l(qr) beta(r) dr for each |k+G| in ``q``."""
    q = np.asarray(q, float)
    r = ps.r_grid
    r_t, f_t = _trim(r, proj.beta * r**2)
    uq, inv = np.unique(np.round(q, 12), return_inverse=True)
    vals = np.empty_like(uq)
    for start in range(0, len(uq), 1024):
        qs = uq[start:start + 1024]
        kernel = spherical_jn(proj.l, np.outer(qs, r_t))
        vals[start:start + 1024] = trapezoid(kernel * f_t, r_t, axis=1)
    return 4.0 * math.pi * vals[inv]
