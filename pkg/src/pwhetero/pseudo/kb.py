"""Separable (Kleinman-Bylander form) nonlocal projectors on a plane-wave basis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from .potential import projector_form_factor


def real_spherical_harmonics(l, vectors):
    """Real Y_lm for m = -l..l evaluated on directions of ``vectors`` (n, 3).

    Returns shape (2l+1, n). Zero vectors give zero for l >= 1.
    """
    v = np.asarray(vectors, dtype=float)
    norm = np.linalg.norm(v, axis=-1)
    safe = np.where(norm > 0, norm, 1.0)
    x, y, z = (v / safe[:, None]).T
    if l == 0:
        return np.full((1, len(v)), 0.5 / math.sqrt(math.pi))
    zero = norm == 0
    if l == 1:
        c = math.sqrt(3.0 / (4.0 * math.pi))
        out = c * np.stack([y, z, x])
    elif l == 2:
        c = 0.5 * math.sqrt(15.0 / math.pi)
        out = np.stack(
            [
                c * x * y,
                c * y * z,
                0.25 * math.sqrt(5.0 / math.pi) * (3.0 * z * z - 1.0),
                c * x * z,
                0.5 * c * (x * x - y * y),
            ]
        )
    else:
        raise ParameterError(f"angular momentum l={l} not supported (l <= 2)")
    out[:, zero] = 0.0
    return out


@dataclass(frozen=True)
class ProjectorSet:
    """Projector vectors ``p_i(G)`` (rows) and couplings ``D_i`` on one basis.

    ``labels`` records (atom index, l, m) for every row.
    """

    vectors: np.ndarray
    couplings: np.ndarray
    labels: tuple

    def __len__(self):
        return len(self.couplings)

    @classmethod
    def empty(cls, nbasis):
        return cls(np.zeros((0, nbasis), dtype=complex), np.zeros(0), ())


def atomic_phases(basis, frac):
    """exp(-i (k+G).tau) for one atom at fractional position ``frac``."""
    return np.exp(-2j * math.pi * ((basis.gvectors + basis.k) @ np.asarray(frac)))


def build_projectors(basis, cell, pseudos):
    """Expand every atom's projectors on ``basis``.

    p(G) = (4 pi / sqrt(Omega)) (-i)^l Y_lm(k+G) beta_l(|k+G|) exp(-i(k+G).tau),
    so that <p|psi> = sum_G conj(p_G) c_G for a normalised coefficient vector.
    """
    kpg = basis.kpg
    q = np.linalg.norm(kpg, axis=1)
    volume = basis.volume
    frac = cell.fractional
    rows, couplings, labels = [], [], []
    cache = {}
    for atom, sym in enumerate(cell.species):
        ps = pseudos.get(sym)
        if ps is None:
            continue
        phase = atomic_phases(basis, frac[atom])
        for proj in ps.projectors:
            key = (sym, proj.l)
            if key not in cache:
                radial = projector_form_factor(ps, proj, q) / math.sqrt(volume)
                ylm = real_spherical_harmonics(proj.l, kpg)
                cache[key] = ((-1j) ** proj.l) * radial[None, :] * ylm
            for m, row in enumerate(cache[key]):
                rows.append(row * phase)
                couplings.append(proj.coupling)
                labels.append((atom, proj.l, m - proj.l))
    if not rows:
        return ProjectorSet.empty(len(basis))
    return ProjectorSet(np.array(rows), np.array(couplings, dtype=float), tuple(labels))


def kb_apply(projectors, couplings, psi):
    """sum_i D_i |p_i><p_i|psi> for psi of shape (n,) or (n, nbands)."""
    p = np.asarray(projectors)
    psi = np.asarray(psi)
    if p.shape[0] == 0:
        return np.zeros(psi.shape, dtype=complex)
    if p.shape[1] != psi.shape[0]:
        raise ParameterError(
            f"projectors live on {p.shape[1]} plane waves but psi has {psi.shape[0]}"
        )
    overlaps = p.conj() @ psi
    d = np.asarray(couplings, dtype=float)
    weighted = d[:, None] * overlaps if overlaps.ndim == 2 else d * overlaps
    return p.T @ weighted
