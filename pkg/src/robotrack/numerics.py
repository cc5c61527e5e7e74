"""Small dense linear-algebra kernel shared by every filter.

Matrices are plain ``numpy`` arrays. Lower-triangular Cholesky factors are
returned as full square arrays with zeros above the diagonal. Most helpers
accept a leading batch dimension so the particle-bank filters can factor
hundreds of 6x6 covariances in one call.
"""

from __future__ import annotations

import functools

import numpy as np
from scipy.linalg.lapack import dgeqrf as _dgeqrf

#: Relative pivot threshold below which a factorization is declared singular.
PIVOT_TOL = 1e-12
#: Relative asymmetry tolerated on input to :func:`cholesky`.
SYMMETRY_TOL = 1e-10


class NotPositiveDefinite(np.linalg.LinAlgError):
    """A covariance (or factor downdate) is not strictly positive definite."""


class DimensionMismatch(ValueError):
    pass


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == M``.

    The input is symmetrized before factoring. A pivot at or below
    ``PIVOT_TOL * max(diag(M))`` counts as a failure, so matrices that are
    only positive semi-definite up to round-off are rejected.

    Raises
    ------
    NotPositiveDefinite
        If the matrix (or any matrix in a batch) has a non-positive pivot.
    ValueError
        If ``M`` is not square or is asymmetric beyond round-off.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"cholesky needs square matrices, got shape {M.shape}")
    scale = np.max(np.abs(M)) if M.size else 0.0
    if scale > 0 and np.max(np.abs(M - np.swapaxes(M, -1, -2))) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    if not np.all(np.isfinite(M)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    M = symmetrize(M)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    diag_M = np.diagonal(M, axis1=-2, axis2=-1)
    diag_L = np.diagonal(L, axis1=-2, axis2=-1)
    floor = PIVOT_TOL * np.max(diag_M, axis=-1, keepdims=True)
    if not np.all(np.isfinite(L)) or np.any(diag_L**2 <= floor):
        raise NotPositiveDefinite("pivot below tolerance")
    return L


def cholesky_trusted(M: np.ndarray) -> np.ndarray:
    """:func:`cholesky` without the shape, symmetry and finiteness checks.

    For hot loops that factor matrices they built symmetric themselves.
    The pivot test is kept, and NaN pivots fail it.
    """
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    d = np.diagonal(L, axis1=-2, axis2=-1)
    if not np.all(d * d > PIVOT_TOL * np.max(np.diagonal(M, axis1=-2, axis2=-1), axis=-1, keepdims=True)):
        raise NotPositiveDefinite("pivot below tolerance")
    return L


def is_positive_definite(M: np.ndarray) -> bool:
    try:
        cholesky(symmetrize(np.asarray(M, dtype=float)))
    except (NotPositiveDefinite, ValueError):
        return False
    return True


def forward_substitute(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``L X = B`` for lower-triangular ``L`` (batched over leading dims)."""
    # np.linalg.solve is LU based, but for <=6x6 blocks it is faster than a
    # python-level triangular loop and exact enough on triangular input.
    return np.linalg.solve(L, B)


def solve_spd(factor: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) X = B`` given the lower factor ``L``.

    ``B`` may be a vector or a matrix; the result has the same shape.
    """
    L = np.asarray(factor, dtype=float)
    B = np.asarray(B, dtype=float)
    if L.shape[-1] != B.shape[0]:
        raise DimensionMismatch(
            f"factor has dimension {L.shape[-1]} but right-hand side has {B.shape[0]} rows"
        )
    Z = np.linalg.solve(L, B)
    return np.linalg.solve(L.T, Z)


def mahalanobis(residual: np.ndarray, S: np.ndarray) -> float:
    """Squared Mahalanobis distance ``r^T S^{-1} r``.

    No square root is taken, so the value compares directly against
    chi-square quantiles.
    """
    r = np.asarray(residual, dtype=float)
    if r.shape[0] != np.shape(S)[0]:
        raise DimensionMismatch("residual and covariance dimensions differ")
    L = cholesky(S)
    z = np.linalg.solve(L, r)
    return float(z @ z)


@functools.lru_cache(maxsize=32)
def _upper_mask(k: int) -> np.ndarray:
    return np.triu(np.ones((k, k)))


def triangularize(M: np.ndarray) -> np.ndarray:
    """Upper-triangular ``R`` with ``R^T R == M^T M`` and non-negative diagonal.

    This is the ``R`` of a compact QR decomposition. Works on stacks of
    matrices of shape ``(..., rows, cols)`` with ``rows >= cols``; a single
    matrix goes straight to LAPACK ``geqrf``, which skips most of the
    per-call overhead of :func:`numpy.linalg.qr`.
    """
    M = np.asarray(M, dtype=float)
    k = M.shape[-1]
    if M.shape[-2] < k:
        raise ValueError("triangularize needs rows >= cols")
    if M.ndim == 3 and M.shape[0] == 1:
        return triangularize(M[0])[None]
    if M.ndim == 2:
        qr, _, _, info = _dgeqrf(M)
        if info != 0:
            raise np.linalg.LinAlgError(f"geqrf failed with info={info}")
        R = qr[:k] * _upper_mask(k)
        d = np.diagonal(R)
    else:
        R = np.linalg.qr(M, mode="r")
        d = np.diagonal(R, axis1=-2, axis2=-1)
    return R * np.copysign(1.0, d)[..., :, None]


def sqrt_factor(blocks: np.ndarray) -> np.ndarray:
    """Lower factor ``S`` with ``S S^T == A A^T`` for a wide compound matrix ``A``.

    ``blocks`` has shape ``(..., n, k)`` with ``k >= n``; this is the
    ``qr([...]^T)^T`` step of the square-root filters.
    """
    return np.swapaxes(triangularize(np.swapaxes(blocks, -1, -2)), -1, -2)


def cholupdate(L: np.ndarray, x: np.ndarray, sign: float = 1.0) -> np.ndarray:
    """Rank-one update (``sign>0``) or downdate of a lower Cholesky factor.

    Returns ``L'`` with ``L' L'^T = L L^T + sign * x x^T``. ``L`` may carry a
    leading batch dimension, matched by ``x`` of shape ``(..., n)``.

    Raises
    ------
    NotPositiveDefinite
        If a downdate would make the matrix indefinite. In batched mode the
        failing entries are reported through :func:`cholupdate_batch`.
    """
    L2, ok = cholupdate_batch(L, x, sign)
    if not np.all(ok):
        raise NotPositiveDefinite("cholesky downdate failed")
    return L2


def cholupdate_batch(L: np.ndarray, x: np.ndarray, sign: float = 1.0):
    """Batched rank-one update returning ``(L', ok)``.

    ``ok`` flags, per batch entry, whether the updated matrix stays strictly
    positive definite. Failed entries are returned unchanged and must be
    repaired by the caller.
    """
    x = np.asarray(x, dtype=float)
    return cholupdate_rank(L, x[..., None], sign)


def cholupdate_rank(L: np.ndarray, U: np.ndarray, sign: float = 1.0):
    """Rank-``m`` update of lower factors: ``L' L'^T = L L^T + sign * U U^T``.

    Works on the factor only: with ``V = L^{-1} U`` the result is
    ``L chol(I + sign V V^T)``, a product of lower-triangular matrices.
    The inner matrix is positive definite exactly when the eigenvalues of
    ``I + sign V^T V`` (``m x m``) are, which gives the per-entry ``ok``
    flag without a failing factorization. Returns ``(L', ok)``.
    """
    L = np.asarray(L, dtype=float)
    U = np.asarray(U, dtype=float)
    n, m = U.shape[-2], U.shape[-1]
    s = 1.0 if sign > 0 else -1.0
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    usable = np.all(diag > 0, axis=-1)
    if not np.all(usable):
        L = np.where(usable[..., None, None], L, np.eye(n))
    V = np.linalg.solve(L, U)
    inner = np.eye(n) + s * (V @ np.swapaxes(V, -1, -2))
    if s > 0 and np.all(usable):
        return L @ np.linalg.cholesky(inner), usable
    try:
        C = np.linalg.cholesky(inner)
        d = np.diagonal(C, axis1=-2, axis2=-1)
        ok = usable & np.all(d * d > PIVOT_TOL, axis=-1)
    except np.linalg.LinAlgError:
        # some entry is indefinite: find which ones from the small m x m problem
        small = np.eye(m) + s * (np.swapaxes(V, -1, -2) @ V)
        lowest = small[..., 0, 0] if m == 1 else np.linalg.eigvalsh(small)[..., 0]
        ok = usable & np.isfinite(lowest) & (lowest > PIVOT_TOL)
        C = np.linalg.cholesky(np.where(ok[..., None, None], inner, np.eye(n)))
    L2 = L @ C
    if not np.all(ok):
        L2 = np.where(ok[..., None, None], L2, L)
    return L2, ok


def repair_covariance(P: np.ndarray, fallback: np.ndarray):
    """Return ``(P_sym, False)`` if ``P`` factors, else ``(fallback, True)``.

    ``P`` is symmetrized first. The boolean tells the caller to count a
    covariance-reset event.
    """
    P = symmetrize(np.asarray(P, dtype=float))
    if is_positive_definite(P):
        return P, False
    return np.array(fallback, dtype=float, copy=True), True


def gaussian_logpdf(residuals: np.ndarray, L: np.ndarray, L_inv: np.ndarray | None = None) -> np.ndarray:
    """Log density of zero-mean Gaussian with lower factor ``L`` at ``residuals``.

    ``residuals`` has shape ``(..., n)``; ``L`` is ``(n, n)`` or batched
    with the same leading shape as ``residuals``. ``L_inv``, the inverse of
    an unbatched ``L``, replaces the triangular solve when the same factor
    is reused many times.
    """
    n = L.shape[-1]
    if L_inv is not None:
        z = residuals @ L_inv.T
        logdet = np.sum(np.log(np.diagonal(L)))
    elif L.ndim == 2:
        z = np.linalg.solve(L, residuals.reshape(-1, n).T).T.reshape(residuals.shape)
        logdet = np.sum(np.log(np.diagonal(L)))
    else:
        z = np.linalg.solve(L, residuals[..., None])[..., 0]
        logdet = np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * np.sum(z * z, axis=-1) - logdet - 0.5 * n * np.log(2.0 * np.pi)
