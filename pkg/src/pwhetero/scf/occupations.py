"""Smearing functions, Fermi level search and density mixing."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc, expit

from ..errors import InsufficientBandsError, ParameterError

COUNT_TOL = 1e-10
_SQRT_PI = math.sqrt(math.pi)


def mp_occupation(x, order=1):
    """Methfessel-Paxton occupation of a state at x = (eps - mu) / sigma.

    Order 1 adds the first Hermite correction to the Gaussian step:
    f = erfc(x)/2 - x exp(-x^2) / (2 sqrt(pi)). Values may leave [0, 1]
    slightly, which is intrinsic to the expansion.
    """
    if order not in (0, 1):
        raise ParameterError("only Methfessel-Paxton orders 0 and 1 are implemented")
    x = np.asarray(x, dtype=float)
    f = 0.5 * erfc(x)
    if order == 1:
        f = f - x * np.exp(-x * x) / (2.0 * _SQRT_PI)
    return f


def gaussian_occupation(x):
    return mp_occupation(x, order=0)


def fermi_dirac_occupation(x):
    return expit(-np.asarray(x, dtype=float))


def mp_entropy(x):
    """Per-state entropy-like term s(x) of first-order Methfessel-Paxton."""
    x = np.asarray(x, dtype=float)
    return (1.0 - 2.0 * x * x) * np.exp(-x * x) / (4.0 * _SQRT_PI)


def gaussian_entropy(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-x * x) / (2.0 * _SQRT_PI)


def fermi_dirac_entropy(x):
    f = np.clip(fermi_dirac_occupation(x), 1e-300, 1.0 - 1e-16)
    return -(f * np.log(f) + (1.0 - f) * np.log1p(-f))


SMEARING = {
    "m-p": (mp_occupation, mp_entropy),
    "gaussian": (gaussian_occupation, gaussian_entropy),
    "f-d": (fermi_dirac_occupation, fermi_dirac_entropy),
}
_ALIASES = {
    "mp": "m-p",
    "methfessel-paxton": "m-p",
    "mv": "m-p",
    "gauss": "gaussian",
    "fd": "f-d",
    "fermi-dirac": "f-d",
}


def smearing_name(kind):
    name = str(kind).lower()
    name = _ALIASES.get(name, name)
    if name not in SMEARING:
        raise ParameterError(f"unknown smearing {kind!r}; choose from {sorted(SMEARING)}")
    return name


def occupations(eigenvalues, mu, sigma, smearing="m-p"):
    """Per-spin occupations f((eps - mu) / sigma) for any array of levels."""
    if not sigma > 0:
        raise ParameterError("smearing width must be positive")
    fn = SMEARING[smearing_name(smearing)][0]
    return fn((np.asarray(eigenvalues, dtype=float) - mu) / sigma)


def electron_count(eigenvalues, weights, mu, sigma, smearing="m-p"):
    """2 sum_k w_k sum_n f_nk with a fixed k order (deterministic sum)."""
    total = 0.0
    for w, eps in zip(weights, eigenvalues):
        total += 2.0 * w * float(np.sum(occupations(eps, mu, sigma, smearing)))
    return total


def smearing_correction(eigenvalues, weights, mu, sigma, smearing="m-p"):
    """-sigma * 2 sum_k w_k sum_n s(x_nk), the smearing free-energy term."""
    fn = SMEARING[smearing_name(smearing)][1]
    total = 0.0
    for w, eps in zip(weights, eigenvalues):
        total += 2.0 * w * float(np.sum(fn((np.asarray(eps) - mu) / sigma)))
    return -sigma * total


def find_fermi(eigenvalues, weights, n_electrons, sigma, smearing="m-p", tol=COUNT_TOL):
    """Chemical potential reproducing ``n_electrons`` by bisection.

    ``eigenvalues`` is a sequence of per-k arrays (Hartree).

    Raises:
        InsufficientBandsError: if even the top of the spectrum cannot hold
            the electrons.
    """
    if not sigma > 0:
        raise ParameterError("smearing width must be positive")
    smearing = smearing_name(smearing)
    levels = np.concatenate([np.ravel(e) for e in eigenvalues])
    capacity = 2.0 * float(np.sum(weights)) * min(len(np.ravel(e)) for e in eigenvalues)
    if capacity < n_electrons - tol:
        raise InsufficientBandsError(
            f"{capacity:g} electron slots for {n_electrons:g} electrons; increase n_bands"
        )
    lo = float(levels.min()) - 40.0 * sigma
    hi = float(levels.max()) + 40.0 * sigma

    def excess(mu):
        return electron_count(eigenvalues, weights, mu, sigma, smearing) - n_electrons

    if excess(hi) < -tol:
        raise InsufficientBandsError("the highest band is still occupied; increase n_bands")
    if excess(lo) > tol:
        raise ParameterError("electron count below the lowest level; check n_electrons")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        e = excess(mid)
        if abs(e) < tol:
            return mid
        if e > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15 * max(1.0, abs(mid)):
            break
    mid = 0.5 * (lo + hi)
    if abs(excess(mid)) >= tol:
        raise InsufficientBandsError("could not bracket the Fermi level to the requested tolerance")
    return mid


def mix_density(n_in, n_out, beta):
    """Linear mixing beta n_out + (1 - beta) n_in on identical grids."""
    a = np.asarray(n_in, dtype=float)
    b = np.asarray(n_out, dtype=float)
    if a.shape != b.shape:
        raise ParameterError(f"grid mismatch: {a.shape} vs {b.shape}")
    if not 0.0 < beta <= 1.0:
        raise ParameterError("mixing beta must lie in (0, 1]")
    return beta * b + (1.0 - beta) * a
