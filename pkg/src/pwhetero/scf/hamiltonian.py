"""Kohn-Sham Hamiltonian application and diagonalisation on a plane-wave basis.

Coefficient blocks are stored column-wise: ``psi`` has shape (n_pw,) or
(n_pw, n_bands).
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from ..errors import ParameterError
from ..pseudo.kb import ProjectorSet, kb_apply
from ..pwbasis import to_realspace, to_reciprocal

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 2000
RESIDUAL_TOL = 1e-8


def _check(basis, v_eff, psi):
    if tuple(np.shape(v_eff)) != tuple(basis.fft_dims):
        raise ParameterError(f"v_eff grid {np.shape(v_eff)} does not match basis grid {basis.fft_dims}")
    if psi.shape[0] != len(basis):
        raise ParameterError(f"psi has {psi.shape[0]} coefficients, basis has {len(basis)}")


def apply_hamiltonian(basis, v_eff, projectors, psi):
    """H psi = 1/2|k+G|^2 psi + FFT(v_eff * IFFT(psi)) + V_NL psi."""
    psi = np.asarray(psi)
    _check(basis, v_eff, psi)
    single = psi.ndim == 1
    block = psi[:, None] if single else psi
    out = basis.kinetic[:, None] * block
    if np.any(v_eff):  # an all-zero local potential needs no FFT round trip
        real = to_realspace(basis, block.T)
        out = out + to_reciprocal(basis, v_eff * real).T
    if projectors is not None and len(projectors):
        out = out + kb_apply(projectors.vectors, projectors.couplings, block)
    return out[:, 0] if single else out


def local_matrix(basis, v_eff):
    """Dense <G|v_eff|G'> = v(G - G') with grid-periodic (aliased) indexing."""
    vg = np.fft.fftn(v_eff) / v_eff.size
    diff = basis.gvectors[:, None, :] - basis.gvectors[None, :, :]
    idx = np.mod(diff, basis.fft_dims)
    return vg[idx[..., 0], idx[..., 1], idx[..., 2]]


def hamiltonian_matrix(basis, v_eff, projectors=None):
    """Explicit Hermitian matrix of :func:`apply_hamiltonian`."""
    if tuple(np.shape(v_eff)) != tuple(basis.fft_dims):
        raise ParameterError(f"v_eff grid {np.shape(v_eff)} does not match basis grid {basis.fft_dims}")
    h = local_matrix(basis, np.asarray(v_eff, dtype=float))
    h[np.diag_indices_from(h)] += basis.kinetic
    if projectors is not None and len(projectors):
        p = projectors.vectors
        h += (p.T * projectors.couplings) @ p.conj()
    # symmetrise away rounding so eigh sees an exactly Hermitian matrix
    return 0.5 * (h + h.conj().T)


def residual_norms(basis, v_eff, projectors, eigenvalues, vectors):
    hv = apply_hamiltonian(basis, v_eff, projectors, vectors)
    return np.linalg.norm(hv - vectors * eigenvalues[None, :], axis=0)


def _dense(basis, v_eff, projectors, n_bands):
    h = hamiltonian_matrix(basis, v_eff, projectors)
    vals, vecs = scipy.linalg.eigh(h, subset_by_index=[0, n_bands - 1], driver="evr")
    return vals, vecs


def _iterative(basis, v_eff, projectors, n_bands, guess, tol, max_iter):
    n = len(basis)
    op = scipy.sparse.linalg.LinearOperator(
        (n, n), matvec=lambda x: apply_hamiltonian(basis, v_eff, projectors, x),
        matmat=lambda x: apply_hamiltonian(basis, v_eff, projectors, x), dtype=complex,
    )
    precond_diag = 1.0 / (basis.kinetic + 1.0)  # kinetic-energy preconditioner
    precond = scipy.sparse.linalg.LinearOperator(
        (n, n), matvec=lambda x: precond_diag * np.ravel(x),
        matmat=lambda x: precond_diag[:, None] * x, dtype=complex,
    )
    if guess is None or guess.shape != (n, n_bands):
        guess = np.zeros((n, n_bands), dtype=complex)
        # lowest-kinetic plane waves plus a deterministic perturbation
        lowest = np.argsort(basis.kinetic, kind="stable")[:n_bands]
        guess[lowest, np.arange(n_bands)] = 1.0
        rng = np.random.default_rng(12345)
        guess += 1e-3 * (rng.standard_normal((n, n_bands)) + 1j * rng.standard_normal((n, n_bands)))
    with warnings.catch_warnings():
        # residuals are checked by the caller, so LOBPCG's own notices are noise
        warnings.simplefilter("ignore", UserWarning)
        vals, vecs = scipy.sparse.linalg.lobpcg(
            op, guess, M=precond, tol=tol, maxiter=max_iter, largest=False
        )
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def diagonalize(
    basis,
    v_eff,
    projectors=None,
    n_bands=1,
    dense_threshold=DENSE_THRESHOLD,
    tol=RESIDUAL_TOL,
    guess=None,
    max_iter=200,
):
    """Lowest ``n_bands`` eigenpairs of the Kohn-Sham operator.

    The dense solver handles bases up to ``dense_threshold`` plane waves.
    Larger bases go through LOBPCG; if any residual stays above ``tol``
    the dense solver is used instead and a note is logged.

    Returns:
        (eigenvalues ascending, eigenvectors as columns).
    """
    n = len(basis)
    if not 1 <= n_bands <= n:
        raise ParameterError(f"n_bands={n_bands} must lie in [1, {n}] for this basis")
    v_eff = np.asarray(v_eff, dtype=float)
    if projectors is None:
        projectors = ProjectorSet.empty(n)
    if n <= dense_threshold or n_bands * 5 > n:
        return _dense(basis, v_eff, projectors, n_bands)
    try:
        # a restart from the previous pass clears LOBPCG's stale search directions
        for _ in range(2):
            vals, vecs = _iterative(basis, v_eff, projectors, n_bands, guess, tol, max_iter)
            # orthonormalise and Rayleigh-Ritz once more to tighten the subspace
            q, _ = np.linalg.qr(vecs)
            hq = apply_hamiltonian(basis, v_eff, projectors, q)
            small = q.conj().T @ hq
            w, u = scipy.linalg.eigh(0.5 * (small + small.conj().T))
            vals, vecs = w, q @ u
            res = residual_norms(basis, v_eff, projectors, vals, vecs)
            if np.all(res < tol):
                return vals, vecs
            guess = vecs
        log.info("iterative solver residual %.2e above %.0e; falling back to dense", res.max(), tol)
    except (np.linalg.LinAlgError, ValueError) as exc:
        log.info("iterative solver failed (%s); falling back to dense", exc)
    return _dense(basis, v_eff, projectors, n_bands)
