"""
Sparse stand-ins for the inverse of a pivot block.

Every construction here takes ``v = U_kj t_j`` and ``u = D_kk^{-1} v`` and
returns a sparse ``F`` with ``F v = u``, which is all the filtering property
of the factorization needs. ``F`` is never asked to approximate
``D_kk^{-1}`` anywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import (
    FbarConstructionFailure,
    InconsistentVectors,
    NearSingularProjector,
    NonSymmetricBlock,
    ZeroFilterDirection,
)
from .sparse import DROP_TOLERANCE, inf_norm

DIAGONAL_NEAREST = "diagonal_nearest"
SYMMETRIC_NEAREST = "symmetric_nearest"
DEFLATION = "deflation"
STRATEGIES = (DIAGONAL_NEAREST, SYMMETRIC_NEAREST, DEFLATION)

# |v(k)| <= ZERO_TOL * ||v||_inf counts as a zero of v
ZERO_TOL = 1e-13
RESIDUAL_TOL = 1e-12
SYMMETRY_TOL = 1e-12
PROJECTOR_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class FbarApprox:
    """A ``b x b`` matrix in triplet form together with the pair it was built for.

    ``rows``/``cols``/``vals`` may hold repeated coordinates only if the
    caller intends them to be summed.
    """

    size: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    strategy: str
    u: np.ndarray
    v: np.ndarray
    # each row index occurs at most once in ``rows``
    unique_rows: bool = False

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        M = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.size, self.size))
        M.sum_duplicates()
        M.sort_indices()
        return M

    @cached_property
    def residual(self) -> float:
        """``||F v - u||_inf`` for the recorded construction vectors."""
        if self.size == 0:
            return 0.0
        return float(np.abs(self.apply(self.v) - self.u).max())

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    def apply(self, X):
        """``F @ X`` for a dense vector/matrix or a sparse matrix."""
        if sp.issparse(X):
            return self.matrix @ X
        X = np.asarray(X)
        out = np.zeros((self.size,) + X.shape[1:])
        if self.vals.size:
            contrib = (self.vals[:, None] if X.ndim == 2 else self.vals) * X[self.cols]
            if self.unique_rows:
                out[self.rows] = contrib
            else:
                np.add.at(out, self.rows, contrib)
        return out

    def meets_contract(self) -> bool:
        unorm = float(np.abs(self.u).max()) if self.u.size else 0.0
        return self.residual <= RESIDUAL_TOL * max(unorm, 1.0)

    @classmethod
    def from_matrix(cls, F, strategy: str, u, v) -> "FbarApprox":
        coo = sp.coo_matrix(F)
        keep = np.abs(coo.data) > DROP_TOLERANCE
        return cls(
            int(F.shape[0]),
            coo.row[keep].astype(np.int64),
            coo.col[keep].astype(np.int64),
            coo.data[keep].astype(np.float64),
            strategy,
            np.asarray(u, dtype=np.float64),
            np.asarray(v, dtype=np.float64),
        )


def _as_pair(u, v):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"u and v differ in length: {u.size} vs {v.size}")
    return u, v


def _zero(u, v, strategy) -> FbarApprox:
    e = np.empty(0, dtype=np.int64)
    return FbarApprox(u.size, e, e.copy(), np.empty(0), strategy, u, v, True)


def nonzero_mask(v, zero_tol: float = ZERO_TOL) -> np.ndarray:
    av = np.abs(v)
    vmax = float(av.max()) if av.size else 0.0
    if vmax == 0.0:
        return np.zeros(v.shape, dtype=bool)
    return av > zero_tol * vmax


def nearest_nonzero(mask: np.ndarray) -> np.ndarray:
    """For every index, the closest index where ``mask`` holds (ties -> lower)."""
    idx = np.flatnonzero(mask)
    pos = np.arange(mask.size)
    right = np.searchsorted(idx, pos)
    lo = idx[np.clip(right - 1, 0, idx.size - 1)]
    hi = idx[np.clip(right, 0, idx.size - 1)]
    # lo is only a valid candidate left of pos when right > 0
    lo = np.where(right > 0, lo, hi)
    hi = np.where(right < idx.size, hi, lo)
    return np.where(pos - lo <= hi - pos, lo, hi)


def _nearest_triplets(u, v, zero_tol):
    mask = nonzero_mask(v, zero_tol)
    if mask.all():
        rows = cols = np.arange(u.size)
        vals = u / v
    elif not mask.any():
        if np.any(u != 0.0):
            raise InconsistentVectors()
        return None
    else:
        cols = nearest_nonzero(mask)
        vals = u / v[cols]
        rows = np.arange(u.size)
    keep = np.abs(vals) > DROP_TOLERANCE
    return rows[keep], cols[keep], vals[keep], mask


def fbar_diagonal_nearest(u, v, zero_tol: float = ZERO_TOL) -> FbarApprox:
    """Diagonal ``u ./ v`` where ``v`` is nonzero; a zero ``v(i)`` borrows the
    nearest nonzero column instead, ``F(i, j) = u(i) / v(j)``.

    Each row holds at most one entry and ``F v = u`` holds entrywise.
    """
    u, v = _as_pair(u, v)
    trip = _nearest_triplets(u, v, zero_tol)
    if trip is None:
        return _zero(u, v, DIAGONAL_NEAREST)
    rows, cols, vals, _ = trip
    return FbarApprox(u.size, rows, cols, vals, DIAGONAL_NEAREST, u, v, True)


def fbar_symmetrize(u, v, zero_tol: float = ZERO_TOL) -> FbarApprox:
    """Symmetric variant of :func:`fbar_diagonal_nearest`.

    Each off-diagonal ``F(i, j)`` is mirrored to ``F(j, i)``. The mirror adds
    ``F(j, i) v(i)`` to row ``j``; ``v(i)`` is (numerically) zero there, and
    the diagonal ``F(j, j)`` is re-solved so ``F v = u`` holds again.
    """
    u, v = _as_pair(u, v)
    trip = _nearest_triplets(u, v, zero_tol)
    if trip is None:
        return _zero(u, v, SYMMETRIC_NEAREST)
    rows, cols, vals, mask = trip
    off = rows != cols
    if not off.any():
        return FbarApprox(u.size, rows, cols, vals, SYMMETRIC_NEAREST, u, v, True)
    orow, ocol, oval = rows[off], cols[off], vals[off]
    # mirror columns are nonzero positions of v by construction of the base pattern
    if orow.size and not mask[ocol].all():
        raise FbarConstructionFailure(None, message="mirror column with zero v entry")
    spurious = np.zeros(u.size)
    np.add.at(spurious, ocol, oval * v[orow])

    diag = np.flatnonzero(mask)
    dval = (u[diag] - spurious[diag]) / v[diag]
    keep = np.abs(dval) > DROP_TOLERANCE
    all_rows = np.concatenate([diag[keep], orow, ocol])
    all_cols = np.concatenate([diag[keep], ocol, orow])
    all_vals = np.concatenate([dval[keep], oval, oval])
    return FbarApprox(u.size, all_rows, all_cols, all_vals, SYMMETRIC_NEAREST, u, v)


def fbar_deflation(D, Z, solve=None, w=None) -> FbarApprox:
    """Rank-one projector ``F = W (Z^T W)^{-1} W^T`` with ``W = D^{-1} Z``.

    ``F Z = W = D^{-1} Z`` exactly. ``D`` must be symmetric; ``solve`` applies
    ``D^{-1}`` (a dense solve is used when omitted) and ``w`` may pass a
    precomputed ``D^{-1} Z``.
    """
    Z = np.asarray(Z, dtype=np.float64).ravel()
    Dm = D.toarray() if sp.issparse(D) else np.asarray(D, dtype=np.float64)
    dnorm = inf_norm(Dm)
    if inf_norm(Dm - Dm.T) > SYMMETRY_TOL * max(dnorm, np.finfo(float).tiny):
        raise NonSymmetricBlock("deflation requires a symmetric pivot block")
    if not np.any(Z != 0.0):
        raise ZeroFilterDirection()
    if w is None:
        w = solve(Z) if solve is not None else np.linalg.solve(Dm, Z)
    w = np.asarray(w, dtype=np.float64).ravel()
    s = float(Z @ w)
    if not s > PROJECTOR_TOL * float(Z @ Z) / dnorm:
        raise NearSingularProjector(f"Z^T D^-1 Z = {s:.3e} is below the projector threshold")
    F = np.outer(w, w) / s
    return FbarApprox.from_matrix(F, DEFLATION, w, Z)
