"""Shift-invert block Lanczos for the smallest eigenpairs of ``S f = lambda M f``.

``M`` is diagonal (lumped mass), so the generalized problem is the standard
symmetric problem for ``A = M^{-1/2} S M^{-1/2}``. Lanczos runs on
``(A + mu I)^{-1} = M^{1/2} (S + mu M)^{-1} M^{1/2}`` whose largest eigenvalues
``theta = 1 / (lambda + mu)`` belong to the smallest ``lambda``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


class EigensolverError(RuntimeError):
    """Factorization failure or otherwise invalid eigenproblem input."""


@dataclass
class LanczosResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # mass-orthonormal columns
    residuals: np.ndarray  # backward errors ||A y - lambda y|| / ||A||
    converged: bool
    basis_size: int
    shift: float


def operator_norm_bound(S: sp.spmatrix, mass: np.ndarray) -> float:
    """Gershgorin bound on ``||M^{-1/2} S M^{-1/2}||_2``."""
    d = 1.0 / np.sqrt(mass)
    A = sp.diags(d) @ abs(S) @ sp.diags(d)
    return float(np.max(np.asarray(A.sum(axis=1)).ravel()))


def backward_errors(S, mass, eigenvalues, eigenvectors) -> np.ndarray:
    """``||S f - lambda M f||_{M^{-1}} / (||A|| ||f||_M)`` for each column."""
    R = S @ eigenvectors - mass[:, None] * eigenvectors * eigenvalues
    num = np.sqrt(np.sum(R * R / mass[:, None], axis=0))
    den = np.sqrt(np.sum(eigenvectors * eigenvectors * mass[:, None], axis=0))
    return num / (operator_norm_bound(S, mass) * den)


def _orthonormalize_against(W, V, rng):
    """Remove span(V) from W twice, then QR; refill rank-deficient columns randomly."""
    for _ in range(2):
        if V.shape[1]:
            W -= V @ (V.T @ W)
    Q, R = np.linalg.qr(W)
    scale = max(np.abs(R).max(), 1e-300)
    dead = np.abs(np.diag(R)) < 1e-12 * scale
    if np.any(dead):
        R[dead, :] = 0.0
        fresh = rng.standard_normal((W.shape[0], int(dead.sum())))
        basis = np.hstack([V, Q[:, ~dead]])
        for _ in range(2):
            fresh -= basis @ (basis.T @ fresh)
        fresh, _ = np.linalg.qr(fresh)
        Q[:, dead] = fresh
    return Q, R


def _top_ritz(T, num):
    theta, ritz = scipy.linalg.eigh(T)
    return theta[::-1][:num], ritz[:, ::-1][:, :num]


def smallest_eigenpairs(
    S,
    mass,
    num: int,
    tol: float = 1e-8,
    max_basis: int | None = None,
    block_size: int | None = None,
    seed: int = 0,
) -> LanczosResult:
    """The ``num`` smallest eigenpairs of ``S f = lambda diag(mass) f``.

    Parameters
    ----------
    S : sparse matrix
        Symmetric positive semi-definite stiffness matrix of order ``K``.
    mass : ndarray
        Positive lumped mass vector of length ``K``.
    num : int
        Number of eigenpairs, ``1 <= num <= K``.
    tol : float
        Ritz-value convergence tolerance, relative to ``theta``.
    max_basis : int, optional
        Krylov basis cap, default ``10 num + 100`` (clipped to ``K``).
    block_size : int, optional
        Lanczos block width. Blocks resolve eigenvalue multiplicities up to the
        block width; default ``min(num, 8)``.
    seed : int
        Seed of the random starting block.

    Returns
    -------
    LanczosResult
        Eigenvalues ascending, eigenvectors with ``F.T @ diag(mass) @ F = I``.
        ``converged`` is False when the basis cap was hit first.
    """
    S = sp.csc_matrix(S)
    mass = np.asarray(mass, dtype=float)
    K = S.shape[0]
    if S.shape != (K, K) or mass.shape != (K,):
        raise ValueError("S must be square and match the mass vector")
    if not 1 <= num <= K:
        raise ValueError(f"num must be in 1..{K}")
    if np.any(mass <= 0):
        raise EigensolverError("mass entries must be positive")

    rng = np.random.default_rng(seed)
    mu = 1e-8 * S.diagonal().sum() / mass.sum()
    if not mu > 0:
        raise EigensolverError("stiffness matrix has nonpositive trace")
    try:
        lu = spla.splu(
            (S + mu * sp.diags(mass)).tocsc(),
            permc_spec="MMD_AT_PLUS_A",
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise EigensolverError(f"factorization of S + mu M failed: {exc}") from exc
    root_m = np.sqrt(mass)

    def apply(Y):
        return root_m[:, None] * lu.solve(root_m[:, None] * Y)

    cap = min(K, max_basis if max_basis is not None else 10 * num + 100)
    cap = max(cap, num)
    b = min(block_size or min(num, 8), cap)

    V = np.zeros((K, cap))
    OPV = np.zeros((K, cap))
    Q, _ = np.linalg.qr(rng.standard_normal((K, b)))
    V[:, :b] = Q
    lo, m = 0, b
    prev = None  # (start, coupling block) of the previous step
    converged = False
    next_check = max(num + b, 2 * b)

    def rayleigh_ritz():
        # explicit projection: the tridiagonal recurrence loses accuracy next to
        # the near-null mode whose theta is ~1/mu
        H = V[:, :m].T @ OPV[:, :m]
        theta, s = _top_ritz(0.5 * (H + H.T), num)
        Y = V[:, :m] @ s
        R = OPV[:, :m] @ s - Y * theta
        return theta, Y, np.linalg.norm(R, axis=0) / np.abs(theta)

    while True:
        Qj = V[:, lo:m]
        W = apply(Qj)
        OPV[:, lo:m] = W
        Aj = Qj.T @ W
        Aj = 0.5 * (Aj + Aj.T)
        W = W - Qj @ Aj
        if prev is not None:
            W -= V[:, prev[0]:lo] @ prev[1].T
        if m >= K:
            theta, Y, _ = rayleigh_ritz()
            converged = True
            break
        width = min(b, cap - m)
        if m >= next_check or width < b:
            theta, Y, rel = rayleigh_ritz()
            logger.debug("lanczos basis=%d max relative residual=%.3e", m, rel.max())
            if rel.max() <= tol:
                converged = True
                break
            next_check = m + max(b, m // 10)
        if width < 1:
            break
        Qn, Bn = _orthonormalize_against(W, V[:, :m], rng)
        Qn, Bn = Qn[:, :width], Bn[:width]
        V[:, m:m + width] = Qn
        prev = (lo, Bn)
        lo, m = m, m + width

    F = Y / root_m[:, None]
    # restore mass-orthonormality lost to round-off
    G = F.T @ (mass[:, None] * F)
    Lg = np.linalg.cholesky(0.5 * (G + G.T))
    F = scipy.linalg.solve_triangular(Lg, F.T, lower=True).T
    # second projection, onto the original pencil: theta carries an absolute
    # error of about eps / mu, which would leak into every lambda = 1/theta - mu
    H = F.T @ (S @ F)
    lam, U = scipy.linalg.eigh(0.5 * (H + H.T))
    F = F @ U
    res = backward_errors(S, mass, lam, F)
    if not converged:
        logger.warning(
            "Lanczos hit basis cap %d before convergence (max backward error %.3e)",
            m, res.max(),
        )
    return LanczosResult(lam, F, res, converged, m, mu)
