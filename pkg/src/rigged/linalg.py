"""Numeric rank, spans and projections with a relative singular-value threshold."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import scipy.linalg

DEFAULT_RANK_TOL = 1e-8


def singular_values(M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros(0)
    return np.linalg.svd(M, compute_uv=False)


def numeric_rank(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above ``rank_tol * sigma_max``."""
    s = singular_values(M)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def span_basis(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL, rank: int | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of the numeric column span of ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    r = numeric_rank(M, rank_tol) if rank is None else rank
    return U[:, :r]


def span_residual(v: np.ndarray, M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Relative least-squares defect of ``v`` against the span of the columns of ``M``.

    Normalized by ``max(|v|, sigma_max(M))`` so that it is comparable with the
    relative rank threshold.
    """
    v = np.asarray(v, dtype=float)
    nv = float(np.linalg.norm(v))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    smax = float(singular_values(M)[0]) if M.size else 0.0
    scale = max(nv, smax)
    if scale == 0.0:
        return 0.0
    if M.size == 0 or smax == 0.0:
        return nv / scale
    Q = span_basis(M, rank_tol)
    defect = v - Q @ (Q.T @ v)
    return float(np.linalg.norm(defect)) / scale


def null_space(M: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of the ``dim`` least significant right-singular directions."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    k = M.shape[1]
    if dim == 0:
        return np.zeros((k, 0))
    _, _, Vt = np.linalg.svd(M, full_matrices=True)
    return Vt[k - dim :, :].T


def complement_in(sub: np.ndarray, whole: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``whole`` intersected with the orthogonal complement of ``sub``."""
    whole = np.asarray(whole, dtype=float)
    if sub.shape[1] == 0:
        return whole
    residual = whole - sub @ (sub.T @ whole)
    target = whole.shape[1] - sub.shape[1]
    if target <= 0:
        return np.zeros((whole.shape[0], 0))
    U, _, _ = np.linalg.svd(residual, full_matrices=False)
    return U[:, :target]


def canonical_basis(B: np.ndarray, snap: float = 1e-12) -> np.ndarray:
    """Reduced echelon basis of span(B) with column pivoting; deterministic for a subspace.

    Columns of the result span the same subspace; entries close to simple
    rationals are snapped to them.
    """
    B = np.asarray(B, dtype=float)
    k = B.shape[1]
    if k == 0:
        return B
    # rows of B.T span the subspace; pivot to pick well-conditioned coordinates
    _, _, piv = scipy.linalg.qr(B.T, pivoting=True, mode="economic")
    cols = np.sort(piv[:k])
    R = np.linalg.solve(B[cols, :].T, B.T).T  # N x k with identity on pivot rows
    R[np.abs(R) < snap] = 0.0
    for idx in np.ndindex(R.shape):
        R[idx] = _snap(R[idx], snap)
    return R


def _snap(x: float, tol: float) -> float:
    f = Fraction(x).limit_denominator(64)
    return float(f) if abs(float(f) - x) < tol else x
