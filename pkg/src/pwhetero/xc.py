"""Spin-unpolarised exchange-correlation functionals and the Hartree term.

Pointwise functionals work on plain arrays of density ``n`` (electrons per
Bohr^3) and, for the gradient-corrected ones, ``sigma = |grad n|^2``. They
return energies per electron and the partial derivatives of the energy
density ``f = n * eps`` needed to assemble the potential on a grid:

    v_xc = df/dn - 2 div(df/dsigma grad n)

All energies are in Hartree.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .pwbasis import FFTGrid

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-12  # below this a grid point is treated as vacuum
MAX_CLAMPED_FRACTION = 0.01

# Published parametrisations, kept at full precision in one place.
#   pz: Perdew & Zunger, Phys. Rev. B 23, 5048 (1981), unpolarised fit.
#   pw92: Perdew & Wang, Phys. Rev. B 45, 13244 (1992), unpolarised G(rs).
#   pbe: Perdew, Burke & Ernzerhof, Phys. Rev. Lett. 77, 3865 (1996).
#        beta is the full-precision value behind the quoted 0.066725 and
#        mu = beta * pi^2 / 3 (the second-order gradient expansion link).
CONSTANTS = {
    "pz": {
        "gamma": -0.1423,
        "beta1": 1.0529,
        "beta2": 0.3334,
        "A": 0.0311,
        "B": -0.048,
        "C": 0.0020,
        "D": -0.0116,
    },
    "pw92": {
        "A": 0.0310907,
        "alpha1": 0.21370,
        "beta1": 7.5957,
        "beta2": 3.5876,
        "beta3": 1.6382,
        "beta4": 0.49294,
    },
    "pbe": {
        "kappa": 0.804,
        "mu": 0.2195149727645171,
        "beta": 0.06672455060314922,
        "gamma": (1.0 - math.log(2.0)) / math.pi**2,
    },
}

FUNCTIONALS = ("pz", "pbe", "none")

_SLATER = -0.75 * (3.0 / math.pi) ** (1.0 / 3.0)
_CS = 1.0 / (4.0 * (3.0 * math.pi**2) ** (2.0 / 3.0))  # s^2 = _CS sigma n^(-8/3)
_CT = math.pi / (16.0 * (3.0 * math.pi**2) ** (1.0 / 3.0))  # t^2 = _CT sigma n^(-7/3)


def wigner_seitz_radius(n):
    n = np.asarray(n, dtype=float)
    return (3.0 / (4.0 * math.pi * n)) ** (1.0 / 3.0)


def _as_density(n):
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ParameterError("density must be non-negative; clamp it first")
    return n


def clamp_density(n):
    """Zero out negative values; return the clamped array and how many were hit."""
    n = np.asarray(n, dtype=float)
    neg = n < 0
    count = int(neg.sum())
    if count:
        n = np.where(neg, 0.0, n)
    return n, count


def lda_exchange(n):
    """Slater exchange: eps_x = -(3/4)(3/pi)^(1/3) n^(1/3), v_x = 4/3 eps_x."""
    n = _as_density(n)
    eps = _SLATER * np.cbrt(n)
    return eps, (4.0 / 3.0) * eps


def pz_correlation(n):
    """Perdew-Zunger correlation, (eps_c, v_c)."""
    n = _as_density(n)
    c = CONSTANTS["pz"]
    eps = np.zeros_like(n)
    v = np.zeros_like(n)
    live = n > 0
    rs = wigner_seitz_radius(n[live])
    e, p = np.empty_like(rs), np.empty_like(rs)

    hi = rs >= 1.0
    sq = np.sqrt(rs[hi])
    denom = 1.0 + c["beta1"] * sq + c["beta2"] * rs[hi]
    e[hi] = c["gamma"] / denom
    p[hi] = e[hi] * (1.0 + 7.0 / 6.0 * c["beta1"] * sq + 4.0 / 3.0 * c["beta2"] * rs[hi]) / denom

    lo = ~hi
    r = rs[lo]
    lnr = np.log(r)
    e[lo] = c["A"] * lnr + c["B"] + c["C"] * r * lnr + c["D"] * r
    p[lo] = (
        c["A"] * lnr
        + (c["B"] - c["A"] / 3.0)
        + 2.0 / 3.0 * c["C"] * r * lnr
        + (2.0 * c["D"] - c["C"]) / 3.0 * r
    )
    eps[live], v[live] = e, p
    return eps, v


def pw92_correlation(n):
    """Perdew-Wang 1992 unpolarised correlation, (eps_c, v_c)."""
    n = _as_density(n)
    c = CONSTANTS["pw92"]
    eps = np.zeros_like(n)
    v = np.zeros_like(n)
    live = n > 0
    rs = wigner_seitz_radius(n[live])
    sq = np.sqrt(rs)
    q0 = -2.0 * c["A"] * (1.0 + c["alpha1"] * rs)
    q1 = 2.0 * c["A"] * (c["beta1"] * sq + c["beta2"] * rs + c["beta3"] * rs * sq + c["beta4"] * rs * rs)
    dq1 = c["A"] * (c["beta1"] / sq + 2.0 * c["beta2"] + 3.0 * c["beta3"] * sq + 4.0 * c["beta4"] * rs)
    log_term = np.log1p(1.0 / q1)
    e = q0 * log_term
    de = -2.0 * c["A"] * c["alpha1"] * log_term - q0 * dq1 / (q1 * q1 + q1)
    eps[live] = e
    v[live] = e - rs / 3.0 * de
    return eps, v


def pbe_exchange(n, sigma):
    """PBE exchange.

    Returns (eps_x, df/dn, df/dsigma) with f = n eps_x; points below the
    vacuum floor are zero.
    """
    n = _as_density(n)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), n.shape)
    kappa, mu = CONSTANTS["pbe"]["kappa"], CONSTANTS["pbe"]["mu"]
    eps = np.zeros_like(n)
    dn = np.zeros_like(n)
    ds = np.zeros_like(n)
    live = n > DENSITY_FLOOR
    nl = n[live]
    n13 = np.cbrt(nl)
    s2 = _CS * sigma[live] / (n13**8)
    denom = 1.0 + mu * s2 / kappa
    fx = 1.0 + kappa - kappa / denom
    dfx = mu / denom**2  # dF/d(s^2)
    ex_lda = _SLATER * n13
    eps[live] = ex_lda * fx
    dn[live] = _SLATER * n13 * (4.0 / 3.0 * fx - 8.0 / 3.0 * s2 * dfx)
    ds[live] = _SLATER * dfx * _CS / (n13**4)
    return eps, dn, ds


def pbe_enhancement(s):
    """Exchange enhancement factor F_x(s)."""
    kappa, mu = CONSTANTS["pbe"]["kappa"], CONSTANTS["pbe"]["mu"]
    s = np.asarray(s, dtype=float)
    return 1.0 + kappa - kappa / (1.0 + mu * s * s / kappa)


def pbe_correlation(n, sigma):
    """PBE correlation on top of PW92.

    Returns (eps_c, df/dn, df/dsigma) with f = n eps_c.
    """
    n = _as_density(n)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), n.shape)
    beta, gamma = CONSTANTS["pbe"]["beta"], CONSTANTS["pbe"]["gamma"]
    b = beta / gamma
    eps = np.zeros_like(n)
    dn = np.zeros_like(n)
    ds = np.zeros_like(n)
    live = n > DENSITY_FLOOR
    nl = n[live]
    ec, vc = pw92_correlation(nl)
    y = _CT * sigma[live] * nl ** (-7.0 / 3.0)  # t^2

    expo = np.expm1(-ec / gamma)
    a = b / expo
    da_dec = b * (expo + 1.0) / (gamma * expo**2)

    u = a * y
    den = 1.0 + u + u * u
    g = (1.0 + u) / den
    dg = -u * (2.0 + u) / den**2
    p = y * g
    inner = 1.0 + b * p
    h = gamma * np.log(inner)
    h_y = beta * (g + u * dg) / inner
    h_a = beta * y * y * dg / inner

    eps[live] = ec + h
    # d(n H)/dn: H + n (H_A A'(ec) dec/dn + H_y dy/dn), n dec/dn = vc - ec
    dn[live] = vc + h + h_a * da_dec * (vc - ec) - 7.0 / 3.0 * y * h_y
    ds[live] = h_y * _CT * nl ** (-4.0 / 3.0)
    return eps, dn, ds


@dataclass(frozen=True)
class XcResult:
    """Exchange-correlation on a grid.

    Attributes:
        energy_density: eps_xc per point (Hartree per electron).
        potential: v_xc per point (Hartree).
        total: cell-integrated E_xc (Hartree).
        clamped: number of negative density points set to zero.
    """

    energy_density: np.ndarray
    potential: np.ndarray
    total: float
    clamped: int = 0

    @property
    def clamped_fraction(self):
        return self.clamped / self.potential.size


def evaluate_xc(grid: FFTGrid, density, functional="pz"):
    """E_xc and v_xc of a real density sampled on ``grid``."""
    functional = functional.lower()
    if functional not in FUNCTIONALS:
        raise ParameterError(f"unknown functional {functional!r}; use one of {FUNCTIONALS}")
    n, clamped = clamp_density(density)
    if n.shape != grid.dims:
        raise ParameterError(f"density shape {n.shape} does not match grid {grid.dims}")
    if functional == "none":
        zero = np.zeros_like(n)
        return XcResult(zero, zero.copy(), 0.0, clamped)
    if functional == "pz":
        ex, vx = lda_exchange(n)
        ec, vc = pz_correlation(n)
        eps, v = ex + ec, vx + vc
    else:
        grad = grid.gradient(n)
        sigma = np.einsum("a...,a...->...", grad, grad)
        ex, dnx, dsx = pbe_exchange(n, sigma)
        ec, dnc, dsc = pbe_correlation(n, sigma)
        eps = ex + ec
        v = dnx + dnc - 2.0 * grid.divergence((dsx + dsc)[None] * grad)
    total = float(np.sum(n * eps) * grid.dv)
    return XcResult(eps, v, total, clamped)


def hartree(density, grid=None):
    """Hartree potential (real grid, Hartree) and energy of a DensityGrid.

    V_H(G) = 4 pi n(G) / G^2 with the G = 0 component dropped, so a uniform
    density carries no Hartree energy. E_H = 1/2 integral n V_H.
    """
    values = np.asarray(density.values, dtype=float)
    if grid is None:
        grid = FFTGrid(density.cell, values.shape)
    elif tuple(grid.dims) != values.shape:
        raise ParameterError(f"density shape {values.shape} does not match grid {grid.dims}")
    ng = grid.to_fourier(values)
    g2 = grid.g2
    safe = np.where(g2 > 0, g2, 1.0)
    vg = np.where(g2 > 0, 4.0 * math.pi * ng / safe, 0.0)
    vh = grid.from_fourier(vg).real
    e_h = 0.5 * float(np.sum(values * vh) * grid.dv)
    return vh, e_h
