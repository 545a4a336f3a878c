"""
Strong rank-revealing QR and interpolative row bases.

``srrqr`` picks k columns J of M with M ~= M[:, J] @ [I | T] (up to column
order) and every |T| <= f. A column-pivoted Householder QR (LAPACK geqp3)
gives the initial selection; Gu-Eisenstat style swaps then exchange a
selected column with an unselected one while some coefficient exceeds f.
Each swap grows the volume of M[:, J] by more than f, so the loop
terminates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InvalidInputError, NumericalFailureError

__all__ = ["SkeletonBasis", "srrqr", "interp_decomp", "get_basis"]


@dataclass
class SkeletonBasis:
    """Interpolative basis U with U[skeleton] = I and |U| <= gbound."""

    basis: np.ndarray
    skeleton: np.ndarray
    gbound: float

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


def _numerical_rank(diag, tol):
    mags = np.abs(diag)
    if mags.size == 0 or mags[0] == 0.0:
        return 0
    small = np.flatnonzero(mags < tol * mags[0])
    return int(small[0]) if small.size else mags.size


def _coefficients(M, J, rest):
    """T with M[:, rest] ~= M[:, J] @ T in the least-squares sense."""
    Q, R = sla.qr(M[:, J], mode="economic")
    return sla.solve_triangular(R, Q.T @ M[:, rest], check_finite=False)


def srrqr(M, tol: float = 1e-12, f: float = 2.0, rank: int | None = None):
    """Strong RRQR column selection.

    Returns ``(J, T)``: J lists the k selected column indices, T is the
    k x (cols - k) coefficient matrix for the remaining columns, taken in
    increasing index order. The rank is the number of leading pivoted-QR
    diagonal entries with |R_jj| >= tol * |R_11| unless ``rank`` is given.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise InvalidInputError("srrqr needs a non-empty 2-D matrix")
    if not (0.0 < tol < 1.0):
        raise InvalidInputError("tol must lie in (0, 1)")
    if f <= 1.0:
        raise InvalidInputError("coefficient bound f must exceed 1")
    m, n = M.shape

    R, piv = sla.qr(M, mode="r", pivoting=True, check_finite=False)
    k = _numerical_rank(np.diag(R), tol) if rank is None else min(int(rank), m, n)
    if k == 0:
        return np.empty(0, dtype=np.intp), np.zeros((0, n))
    if k == n:
        return piv.astype(np.intp), np.zeros((k, 0))

    kk = min(k, R.shape[0])
    T = sla.solve_triangular(R[:kk, :kk], R[:kk, kk:], check_finite=False)
    J = piv[:k].copy()
    rest = piv[k:].copy()

    cap = m * n
    swaps = 0
    while True:
        flat = int(np.argmax(np.abs(T)))
        i, j = divmod(flat, T.shape[1])
        if abs(T[i, j]) <= f:
            break
        swaps += 1
        if swaps > cap:
            raise NumericalFailureError(f"srrqr swap loop exceeded {cap} swaps")
        J[i], rest[j] = rest[j], J[i]
        T = _coefficients(M, J, rest)

    order = np.argsort(rest, kind="stable")
    return J.astype(np.intp), T[:, order]


def interp_decomp(A, tol: float = 1e-12, f: float = 2.0, rank: int | None = None):
    """Row interpolative decomposition A ~= U @ A[skel, :] with U[skel] = I."""
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    J, T = srrqr(A.T, tol=tol, f=f, rank=rank)
    k = J.size
    U = np.zeros((m, k))
    U[J, np.arange(k)] = 1.0
    rest = np.setdiff1d(np.arange(m), J, assume_unique=False)
    if rest.size:
        U[rest] = T.T
    return SkeletonBasis(U, J, f)


def get_basis(kernel, Xi, Ystar, points, tol: float = 1e-8, f: float = 2.0) -> SkeletonBasis:
    """Interpolative row basis for the kernel block over Xi x Ystar.

    Only the small block K[Xi, Ystar] is formed. ``skeleton`` indexes into
    ``Xi`` (positions, not point ids).
    """
    Xi = np.asarray(Xi, dtype=np.intp)
    Ystar = np.asarray(Ystar, dtype=np.intp)
    if Xi.size == 0 or Ystar.size == 0:
        raise InvalidInputError("get_basis needs non-empty row and column sets")
    coords = getattr(points, "coords", points)
    A = kernel.block(coords[Xi], coords[Ystar])
    return interp_decomp(A, tol=tol, f=f)
