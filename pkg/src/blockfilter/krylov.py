"""Krylov solvers with optional preconditioning, plus a block-Jacobi baseline.

The initial guess is always zero and every reported final residual is the
true residual ``||b - A x|| / ||b||`` recomputed from the returned iterate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import BreakdownError, DimensionMismatch, IndefinitenessDetected
from .factor import DiagonalBlock
from .partition import BlockPartition
from .sparse import canonical

Preconditioner = Callable[[np.ndarray], np.ndarray]

REORTH_TOL = 1e-8
BREAKDOWN_TOL = 1e-14


@dataclass(frozen=True)
class SolverParams:
    max_iterations: int = 1000
    relative_tolerance: float = 1e-8
    restart: int = 50
    record_history: bool = True

    def __post_init__(self):
        if not 0.0 < self.relative_tolerance < 1.0:
            raise ValueError(f"relative_tolerance must lie in (0, 1), got {self.relative_tolerance}")
        if self.restart < 1:
            raise ValueError(f"restart must be >= 1, got {self.restart}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_history: list[float]
    final_residual: float
    wall_time: float
    filtering_residual_rel: float | None = None
    solution: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "residual_history": list(self.residual_history),
            "filtering_residual_rel": self.filtering_residual_rel,
            "wall_time": self.wall_time,
        }


def _operator(A):
    if callable(A) and not sp.issparse(A) and not isinstance(A, np.ndarray):
        return A
    return lambda x: A @ x


def _setup(A, b):
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or A.shape != (b.size, b.size):
        raise DimensionMismatch(f"operator of shape {A.shape} with right-hand side of shape {b.shape}")
    return b


def _givens(a: float, b: float):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres(A, b, M: Preconditioner | None = None, params: SolverParams = SolverParams()) -> SolveReport:
    """Restarted GMRES with right preconditioning, ``A M^{-1} y = b``.

    Arnoldi uses modified Gram-Schmidt with one extra pass whenever the new
    vector keeps a component above ``REORTH_TOL`` along the basis.
    """
    start = time.perf_counter()
    b = _setup(A, b)
    matvec = _operator(A)
    precond = M if M is not None else (lambda r: r)
    n = b.size
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    history = [1.0] if params.record_history else []
    if bnorm == 0.0:
        return SolveReport(True, 0, history, 0.0, time.perf_counter() - start, solution=x)

    tol = params.relative_tolerance
    m = params.restart
    r = b.copy()
    beta = bnorm
    iterations = 0
    converged = False
    while iterations < params.max_iterations:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        steps = 0
        broke_down = False
        for k in range(m):
            w = matvec(precond(V[k]))
            wnorm0 = float(np.linalg.norm(w))
            for i in range(k + 1):
                H[i, k] = V[i] @ w
                w -= H[i, k] * V[i]
            hnext = float(np.linalg.norm(w))
            if hnext > 0.0:
                c = V[: k + 1] @ w
                if np.max(np.abs(c)) > REORTH_TOL * hnext:
                    w -= V[: k + 1].T @ c
                    H[: k + 1, k] += c
                    hnext = float(np.linalg.norm(w))
            H[k + 1, k] = hnext
            for i in range(k):
                hi, hj = H[i, k], H[i + 1, k]
                H[i, k] = cs[i] * hi + sn[i] * hj
                H[i + 1, k] = -sn[i] * hi + cs[i] * hj
            cs[k], sn[k] = _givens(H[k, k], H[k + 1, k])
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            steps = k + 1
            iterations += 1
            estimate = abs(g[k + 1]) / bnorm
            if params.record_history:
                history.append(float(estimate))
            if hnext <= BREAKDOWN_TOL * wnorm0:
                broke_down = True
                break
            if estimate <= tol or iterations >= params.max_iterations:
                break
            V[k + 1] = w / hnext

        diag = np.abs(np.diag(H[:steps, :steps]))
        if broke_down and diag.min() <= BREAKDOWN_TOL * diag.max():
            elapsed = time.perf_counter() - start
            report = SolveReport(False, iterations, history, float(beta / bnorm), elapsed, solution=x)
            raise BreakdownError("Arnoldi breakdown with a singular Hessenberg matrix", report)
        y = _back_substitute(H[:steps, :steps], g[:steps])
        x = x + precond(V[:steps].T @ y)
        r = b - matvec(x)
        beta = float(np.linalg.norm(r))
        if params.record_history:
            history[-1] = beta / bnorm
        if beta / bnorm <= tol:
            converged = True
            break
        if broke_down:
            # exact Krylov solution that still misses the target: no progress possible
            elapsed = time.perf_counter() - start
            report = SolveReport(False, iterations, history, beta / bnorm, elapsed, solution=x)
            raise BreakdownError("Arnoldi breakdown with a nonzero residual", report)

    return SolveReport(converged, iterations, history, beta / bnorm, time.perf_counter() - start, solution=x)


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    y = np.zeros_like(g)
    for i in reversed(range(g.size)):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


def cg(
    A,
    b,
    M: Preconditioner | None = None,
    params: SolverParams = SolverParams(),
    check_symmetric: bool = False,
) -> SolveReport:
    """Preconditioned conjugate gradients; only the 2-norm residual is reported."""
    start = time.perf_counter()
    b = _setup(A, b)
    if check_symmetric and sp.issparse(A):
        S = canonical(A - A.T)
        if S.nnz and abs(S).max() > 1e-12 * abs(A).max():
            raise ValueError("matrix is not symmetric")
    matvec = _operator(A)
    precond = M if M is not None else (lambda r: r)
    x = np.zeros(b.size)
    bnorm = float(np.linalg.norm(b))
    history = [1.0] if params.record_history else []
    if bnorm == 0.0:
        return SolveReport(True, 0, history, 0.0, time.perf_counter() - start, solution=x)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    tol = params.relative_tolerance
    iterations = 0
    converged = False
    while iterations < params.max_iterations:
        q = matvec(p)
        pq = float(p @ q)
        if pq <= 0.0:
            report = SolveReport(False, iterations, history, float(np.linalg.norm(r)) / bnorm,
                                 time.perf_counter() - start, solution=x)
            raise IndefinitenessDetected(f"p^T A p = {pq:.3e} at iteration {iterations + 1}", report)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        iterations += 1
        res = float(np.linalg.norm(r)) / bnorm
        if params.record_history:
            history.append(res)
        if res <= tol:
            break
        z = precond(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    final = float(np.linalg.norm(b - matvec(x))) / bnorm
    converged = final <= tol
    if params.record_history:
        history[-1] = final
    return SolveReport(converged, iterations, history, final, time.perf_counter() - start, solution=x)


def block_jacobi_preconditioner(A, part: BlockPartition) -> Preconditioner:
    """``z_i = A_ii^{-1} r_i`` for every diagonal block of ``A`` (already in
    the partition's ordering)."""
    A = canonical(A)
    off = part.offsets
    blocks = [DiagonalBlock(canonical(A[off[i]:off[i + 1], off[i]:off[i + 1]]), i) for i in range(part.num_blocks)]

    def apply(r):
        r = np.asarray(r, dtype=np.float64)
        z = np.empty_like(r)
        for i, d in enumerate(blocks):
            z[off[i]:off[i + 1]] = d.solve(r[off[i]:off[i + 1]])
        return z

    return apply


def jacobi_preconditioner(A) -> Preconditioner:
    d = canonical(A).diagonal()
    if np.any(d == 0.0):
        raise ValueError("zero on the diagonal")
    return lambda r: np.asarray(r) / d
