"""
Block LDU factorizations ``M = (L + D) D^{-1} (U + D)``.

Three variants share one left-looking engine. Block column ``j`` of
``C = L + D + U`` starts as ``A[:, j]`` and receives, for increasing ``k < j``,
the update ``- L[:, k] G_kj U_kj`` once ``U_kj`` is final:

* ``exact``     -- ``G_kj = D_kk^{-1}``, the exact block factorization;
* ``direct``    -- ``G_kj = F_kj``;
* ``composite`` -- ``G_kj = 2 F_kj - F_kj D_kk F_kj``;

where ``F_kj`` is built from ``v = U_kj t_j`` and ``u = D_kk^{-1} v`` so that
``F_kj v = u``. That single identity makes every block of ``M - A`` vanish on
``t``, hence ``M t = A t``.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fbar as fb
from .errors import (
    CapExceeded,
    DimensionMismatch,
    FbarConstructionFailure,
    SingularDiagonalBlock,
    ZeroFilterDirection,
)
from .partition import BlockPartition
from .sparse import DROP_TOLERANCE, canonical, inf_norm, mm_write

log = logging.getLogger(__name__)

EXACT = "exact"
DIRECT = "direct"
COMPOSITE = "composite"
VARIANTS = (EXACT, DIRECT, COMPOSITE)

DENSE_SOLVE_MAX = 512
PIVOT_TOL = 1e-14
SOLVE_CHECK_TOL = 1e-12
# dense working column allowed while n * b_j stays below this many entries
WORKSPACE_CAP = 1 << 22
DENSE_ASSEMBLY_CAP = 2000
FILTER_TOL = 1e-10

FbarHook = Callable[[int, int, fb.FbarApprox, "DiagonalBlock"], fb.FbarApprox]


# -- pivot blocks ------------------------------------------------------------


class DiagonalBlock:
    """A pivot block ``D_kk`` and its LU factors.

    Dense LU with partial pivoting up to ``DENSE_SOLVE_MAX`` rows, SuperLU
    (partial pivoting, ``diag_pivot_thresh=1``) above.
    """

    def __init__(self, matrix: sp.csr_matrix, index: int):
        self.matrix = matrix
        self.index = index
        self.size = matrix.shape[0]
        self.norm = inf_norm(matrix)
        if self.norm == 0.0:
            raise SingularDiagonalBlock(index, f"diagonal block {index} is structurally zero")
        thresh = PIVOT_TOL * self.norm
        self.dense = None
        self._lu = None
        self._splu = None
        self._scalar = None
        if self.size == 1:
            self.dense = matrix.toarray()
            self._scalar = float(self.dense[0, 0])
            pivots = np.abs(self.dense[0])
        elif self.size <= DENSE_SOLVE_MAX:
            self.dense = matrix.toarray()
            self._lu = sla.lu_factor(self.dense, check_finite=False)
            pivots = np.abs(np.diag(self._lu[0]))
        else:
            try:
                self._splu = spla.splu(matrix.tocsc(), diag_pivot_thresh=1.0)
            except RuntimeError as exc:
                raise SingularDiagonalBlock(index, f"diagonal block {index}: {exc}") from exc
            pivots = np.abs(self._splu.U.diagonal())
        if pivots.min() < thresh:
            raise SingularDiagonalBlock(
                index, f"diagonal block {index}: pivot {pivots.min():.3e} below {thresh:.3e}"
            )

    def solve(self, x):
        if sp.issparse(x):
            x = x.toarray()
        if self._scalar is not None:
            return np.asarray(x, dtype=np.float64) / self._scalar
        if self._lu is not None:
            return sla.lu_solve(self._lu, x, check_finite=False)
        return self._splu.solve(np.asarray(x, dtype=np.float64))

    def matmul(self, x):
        if self.dense is not None and not sp.issparse(x):
            return self.dense @ x
        return self.matrix @ x

    def check_solve(self, rng) -> float:
        """Backward error of one solve with a random right-hand side."""
        x = rng.standard_normal(self.size)
        z = self.solve(x)
        return inf_norm(self.matrix @ z - x) / max(self.norm * inf_norm(z), np.finfo(float).tiny)


# -- result types ------------------------------------------------------------


@dataclass(frozen=True)
class FilterVector:
    """The filtering vector ``t``, optionally segmented by a partition."""

    values: np.ndarray
    segment_offsets: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "values", vals)
        if self.segment_offsets is not None:
            off = np.asarray(self.segment_offsets, dtype=np.int64)
            if off[0] != 0 or off[-1] != vals.size or np.any(np.diff(off) < 1):
                raise DimensionMismatch("segment offsets do not tile the vector")
            object.__setattr__(self, "segment_offsets", off)

    @classmethod
    def for_partition(cls, values, part: BlockPartition) -> "FilterVector":
        """Segment ``values`` (already in the permuted ordering) by ``part``."""
        return cls(values, part.offsets)

    def segment(self, j: int) -> np.ndarray:
        off = self.segment_offsets
        if off is None:
            raise ValueError("filter vector is not segmented")
        return self.values[off[j]:off[j + 1]]

    def __len__(self):
        return self.values.size


@dataclass(eq=False)
class BlockFactorization:
    partition: BlockPartition
    variant: str
    strategy: str | None
    lower: sp.csr_matrix
    upper: sp.csr_matrix
    diag_blocks: list[DiagonalBlock]
    fbar: dict[tuple[int, int], fb.FbarApprox] = field(default_factory=dict)
    filter_vector: FilterVector | None = None

    @property
    def n(self) -> int:
        return self.partition.n

    @cached_property
    def diagonal(self) -> sp.csr_matrix:
        return sp.block_diag([d.matrix for d in self.diag_blocks], format="csr")

    @cached_property
    def combined(self) -> sp.csr_matrix:
        """``C = L + D + U`` in one matrix."""
        return canonical(self.lower + self.diagonal + self.upper)

    @cached_property
    def lower_blocks(self) -> dict[tuple[int, int], sp.csr_matrix]:
        return _split_blocks(self.lower, self.partition)

    @cached_property
    def upper_blocks(self) -> dict[tuple[int, int], sp.csr_matrix]:
        return _split_blocks(self.upper, self.partition)

    def block(self, i: int, j: int) -> sp.csr_matrix:
        """Block ``C_ij`` (``L_ij``, ``D_ii`` or ``U_ij``)."""
        if i == j:
            return self.diag_blocks[i].matrix
        src = self.lower_blocks if i > j else self.upper_blocks
        if (i, j) in src:
            return src[(i, j)]
        sz = self.partition.block_sizes
        return sp.csr_matrix((int(sz[i]), int(sz[j])))

    def solve_diagonal(self, x) -> np.ndarray:
        off = self.partition.offsets
        out = np.empty_like(np.asarray(x, dtype=np.float64))
        for k, d in enumerate(self.diag_blocks):
            out[off[k]:off[k + 1]] = d.solve(x[off[k]:off[k + 1]])
        return out

    def matvec(self, x) -> np.ndarray:
        """``M x`` without forming ``M``."""
        x = np.asarray(x, dtype=np.float64)
        w = self.solve_diagonal(self.upper @ x + self.diagonal @ x)
        return self.lower @ w + self.diagonal @ w

    @cached_property
    def _row_slices(self):
        off = self.partition.offsets
        N = self.partition.num_blocks
        L, U = self.lower, self.upper
        lrows = [L[off[i]:off[i + 1], :off[i]] for i in range(N)]
        urows = [U[off[i]:off[i + 1], off[i + 1]:] for i in range(N)]
        return lrows, urows

    def solve(self, r) -> np.ndarray:
        """``M^{-1} r``: block forward solve, scaling by ``D``, block back solve."""
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.n,):
            raise DimensionMismatch(f"expected a vector of length {self.n}, got shape {r.shape}")
        off = self.partition.offsets
        lrows, urows = self._row_slices
        N = self.partition.num_blocks
        w = np.empty(self.n)
        for i in range(N):
            a, b = off[i], off[i + 1]
            rhs = r[a:b]
            if lrows[i].nnz:
                rhs = rhs - lrows[i] @ w[:a]
            w[a:b] = self.diag_blocks[i].solve(rhs)
        y = self.diagonal @ w
        z = np.empty(self.n)
        for i in reversed(range(N)):
            a, b = off[i], off[i + 1]
            rhs = y[a:b]
            if urows[i].nnz:
                rhs = rhs - urows[i] @ z[b:]
            z[a:b] = self.diag_blocks[i].solve(rhs)
        return z

    __call__ = solve

    def max_fbar_residual(self) -> float:
        return max((f.residual for f in self.fbar.values()), default=0.0)


def _split_blocks(M: sp.csr_matrix, part: BlockPartition) -> dict[tuple[int, int], sp.csr_matrix]:
    coo = M.tocoo()
    if coo.nnz == 0:
        return {}
    off = part.offsets
    bi = part.block_of[coo.row]
    bj = part.block_of[coo.col]
    order = np.lexsort((coo.col, coo.row, bj, bi))
    bi, bj = bi[order], bj[order]
    rows, cols, vals = coo.row[order], coo.col[order], coo.data[order]
    key = bi * part.num_blocks + bj
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    ends = np.r_[starts[1:], key.size]
    sz = part.block_sizes
    out = {}
    for s, e in zip(starts, ends):
        i, j = int(bi[s]), int(bj[s])
        out[(i, j)] = canonical(
            sp.csr_matrix((vals[s:e], (rows[s:e] - off[i], cols[s:e] - off[j])), shape=(int(sz[i]), int(sz[j])))
        )
    return out


# -- engine ------------------------------------------------------------------


class _Panel:
    """Strictly-lower part of a finished block column, ``L[off[k+1]:, k]``."""

    def __init__(self, W, start: int, dense: bool):
        self.start = start
        if dense:
            big = np.abs(W) > DROP_TOLERANCE
            rows = np.flatnonzero(big.any(axis=1))
            vals = np.where(big[rows], W[rows], 0.0)
            self.rows = rows + start
            self.vals = vals
            coo_r, coo_c = np.nonzero(vals)
            self.coo = (rows[coo_r] + start, coo_c, vals[coo_r, coo_c])
        else:
            W = canonical(W)
            c = W.tocoo()
            self.rows = None
            self.vals = None
            self.csr = W
            self.coo = (c.row + start, c.col, c.data)
        self.empty = self.coo[2].size == 0
        self.dense = dense

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        if not self.dense:
            return self.csr
        nr = self.rows.max() + 1 - self.start if self.rows.size else 0
        r, c, v = self.coo
        return sp.csr_matrix((v, (r - self.start, c)), shape=(nr, self.vals.shape[1]))

    def subtract_update(self, W, GU):
        """``W[start:] -= L_panel @ GU``."""
        if not sp.issparse(W):
            if sp.issparse(GU):
                GU = GU.toarray()
            if self.dense:
                W[self.rows] -= self.vals @ GU
            else:
                upd = self.csr @ GU
                W[self.start:self.start + upd.shape[0]] -= upd
            return W
        if not sp.issparse(GU):
            GU = sp.csr_matrix(GU)
        upd = sp.coo_matrix(self.matrix @ GU)
        shifted = sp.csr_matrix((upd.data, (upd.row + self.start, upd.col)), shape=W.shape)
        return canonical(W - shifted)


def _triplets(W, row_shift: int, col_shift: int):
    if sp.issparse(W):
        c = canonical(W).tocoo()
        return c.row + row_shift, c.col + col_shift, c.data
    r, c = np.nonzero(np.abs(W) > DROP_TOLERANCE)
    return r + row_shift, c + col_shift, W[r, c]


def _make_fbar(strategy: str, u, v, block: DiagonalBlock) -> fb.FbarApprox:
    if strategy == fb.DIAGONAL_NEAREST:
        return fb.fbar_diagonal_nearest(u, v)
    if strategy == fb.SYMMETRIC_NEAREST:
        return fb.fbar_symmetrize(u, v)
    if strategy == fb.DEFLATION:
        try:
            return fb.fbar_deflation(block.dense if block.dense is not None else block.matrix, v, w=u)
        except ZeroFilterDirection:
            return fb._zero(u, v, fb.DEFLATION)
    raise ValueError(f"unknown F-bar strategy {strategy!r}")


def _factorize(
    A,
    part: BlockPartition,
    variant: str,
    t: np.ndarray | None,
    strategy: str | None,
    fbar_hook: FbarHook | None,
    workspace_cap: int,
    check_solves: bool,
) -> BlockFactorization:
    A = canonical(A)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got {A.shape}")
    if part.n != n:
        raise DimensionMismatch(f"partition covers {part.n} unknowns, matrix has {n}")
    off = [int(o) for o in part.offsets]
    N = part.num_blocks
    Acsc = A.tocsc()
    block_of = part.block_of
    rng = np.random.default_rng(0)

    diag: list[DiagonalBlock] = []
    panels: list[_Panel] = []
    fbars: dict[tuple[int, int], fb.FbarApprox] = {}
    upper_parts = []

    for j in range(N):
        c0, c1 = off[j], off[j + 1]
        dense = n * (c1 - c0) <= workspace_cap
        Acol = Acsc[:, c0:c1]
        W = Acol.toarray() if dense else Acol.tocsr()
        tj = t[c0:c1] if t is not None else None
        # candidate block rows k < j of U_kj, visited in increasing order; an
        # update through panel k can only make rows of panel k nonzero
        heap = sorted(set(block_of[Acol.indices[Acol.indices < c0]].tolist()))
        queued = set(heap)
        while heap:
            k = heapq.heappop(heap)
            panel = panels[k]
            if panel.empty:
                continue
            Ukj = W[off[k]:off[k + 1]]
            if sp.issparse(Ukj):
                if Ukj.nnz == 0:
                    continue
            elif not (np.abs(Ukj) > DROP_TOLERANCE).any():
                continue
            Dk = diag[k]
            if variant == EXACT:
                GU = Dk.solve(Ukj)
            else:
                v = np.asarray(Ukj @ tj).ravel()
                u = Dk.solve(v)
                try:
                    approx = _make_fbar(strategy, u, v, Dk)
                except FbarConstructionFailure as exc:
                    raise FbarConstructionFailure(k, j, f"F-bar for block ({k}, {j}): {exc}") from exc
                if not approx.meets_contract():
                    raise FbarConstructionFailure(
                        k, j, f"F-bar for block ({k}, {j}) has residual {approx.residual:.3e}"
                    )
                if fbar_hook is not None:
                    approx = fbar_hook(k, j, approx, Dk)
                fbars[(k, j)] = approx
                if approx.nnz == 0:
                    continue
                FU = approx.apply(Ukj)
                if variant == COMPOSITE:
                    GU = 2.0 * FU - approx.apply(Dk.matmul(FU))
                else:
                    GU = FU
            W = panel.subtract_update(W, GU)
            for kk in panel.blocks:
                if kk >= j:
                    break
                if kk not in queued:
                    queued.add(kk)
                    heapq.heappush(heap, kk)

        Djj = W[c0:c1]
        block = DiagonalBlock(canonical(Djj), j)
        if check_solves:
            err = block.check_solve(rng)
            if err > SOLVE_CHECK_TOL:
                raise SingularDiagonalBlock(j, f"diagonal block {j}: solve backward error {err:.3e}")
        diag.append(block)
        upper_parts.append(_triplets(W[:c0], 0, c0))
        panel = _Panel(W[c1:], c1, dense)
        panel.blocks = np.unique(block_of[panel.coo[0]]).tolist()
        panels.append(panel)
        log.debug("block column %d/%d done", j + 1, N)

    def assemble(parts):
        if not parts:
            return sp.csr_matrix((n, n))
        r = np.concatenate([p[0] for p in parts])
        c = np.concatenate([p[1] for p in parts])
        v = np.concatenate([p[2] for p in parts])
        return canonical(sp.csr_matrix((v, (r, c)), shape=(n, n)))

    lower_parts = [(p.coo[0], p.coo[1] + off[k], p.coo[2]) for k, p in enumerate(panels)]
    fv = FilterVector.for_partition(t, part) if t is not None else None
    return BlockFactorization(
        part, variant, strategy, assemble(lower_parts), assemble(upper_parts), diag, fbars, fv
    )


def exact_block_ldu(A, part: BlockPartition, *, workspace_cap: int = WORKSPACE_CAP, check_solves: bool = False):
    """Exact block factorization ``A = (L + D) D^{-1} (U + D)``.

    ``A`` must already be in the partition's ordering.
    """
    return _factorize(A, part, EXACT, None, None, None, workspace_cap, check_solves)


def build_filter_factorization(
    A,
    part: BlockPartition,
    t,
    variant: str = DIRECT,
    strategy: str = fb.DIAGONAL_NEAREST,
    *,
    fbar_hook: FbarHook | None = None,
    workspace_cap: int = WORKSPACE_CAP,
    check_solves: bool = False,
) -> BlockFactorization:
    """Block filtering factorization with ``M t = A t``.

    ``A`` and ``t`` must both be in the partition's ordering. ``fbar_hook``,
    when given, may replace each approximation after it passed its residual
    check; it is meant for tests and fault injection.
    """
    if variant not in (DIRECT, COMPOSITE):
        raise ValueError(f"variant must be 'direct' or 'composite', got {variant!r}")
    if strategy not in fb.STRATEGIES:
        raise ValueError(f"unknown F-bar strategy {strategy!r}")
    if isinstance(t, FilterVector):
        if t.segment_offsets is not None and not np.array_equal(t.segment_offsets, part.offsets):
            raise DimensionMismatch("filter vector is segmented by a different partition")
        t = t.values
    t = np.asarray(t, dtype=np.float64).ravel()
    if t.size != A.shape[0]:
        raise DimensionMismatch(f"filter vector has length {t.size}, matrix has {A.shape[0]} rows")
    return _factorize(A, part, variant, t, strategy, fbar_hook, workspace_cap, check_solves)


def factorize(A, part, variant, t=None, strategy=fb.DIAGONAL_NEAREST, **kwargs) -> BlockFactorization:
    """Dispatch on ``variant``; ``t`` is ignored for the exact variant."""
    if variant == EXACT:
        return exact_block_ldu(A, part, **kwargs)
    return build_filter_factorization(A, part, t, variant, strategy, **kwargs)


def apply_preconditioner(F: BlockFactorization, r) -> np.ndarray:
    return F.solve(r)


# -- checks ------------------------------------------------------------------


@dataclass
class FilteringReport:
    residual_inf: float
    residual_rel: float
    per_block: dict[tuple[int, int], float] | None = None
    # per-block pass thresholds, FILTER_TOL times the size of the summed terms
    block_bounds: dict[tuple[int, int], float] | None = None

    def failing_blocks(self) -> list[tuple[int, int]]:
        if self.per_block is None:
            return []
        return [ij for ij, r in self.per_block.items() if r > self.block_bounds[ij]]

    @property
    def passed(self) -> bool:
        return self.residual_rel <= FILTER_TOL and not self.failing_blocks()


def filtering_residual(F: BlockFactorization, A, t, per_block: bool = False) -> FilteringReport:
    """Measure ``||M t - A t||`` and, optionally, every ``||B_ij t_j||_inf``.

    ``B = M - A`` has blocks
    ``B_ij = C_ij + sum_k L_ik D_kk^{-1} U_kj - A_ij`` (``k < min(i, j)``).
    """
    if isinstance(t, FilterVector):
        t = t.values
    t = np.asarray(t, dtype=np.float64)
    A = canonical(A)
    if A.shape != (F.n, F.n) or t.shape != (F.n,):
        raise DimensionMismatch("matrix, vector and factorization sizes differ")
    At = A @ t
    diff = F.matvec(t) - At
    res = inf_norm(diff)
    scale = inf_norm(A) * inf_norm(t)
    rel = res / scale if scale > 0 else res
    if not per_block:
        return FilteringReport(res, rel)

    part = F.partition
    off = part.offsets
    N = part.num_blocks
    Cc = F.combined.tocsc()
    Ac = A.tocsc()
    Lc = F.lower.tocsc()
    Uc = F.upper.tocsc()
    lower_norms = {ij: inf_norm(b) for ij, b in F.lower_blocks.items()}
    lower_by_col: dict[int, list[int]] = {}
    for i, k in sorted(F.lower_blocks):
        lower_by_col.setdefault(k, []).append(i)
    upper_by_col: dict[int, list[int]] = {}
    for k, j in sorted(F.upper_blocks):
        upper_by_col.setdefault(j, []).append(k)

    values: dict[tuple[int, int], float] = {}
    bounds: dict[tuple[int, int], float] = {}
    for j in range(N):
        a, b = off[j], off[j + 1]
        tj = t[a:b]
        tnorm = inf_norm(tj)
        Cj = Cc[:, a:b]
        Aj = Ac[:, a:b]
        R = Cj @ tj - Aj @ tj
        S = np.zeros(N)
        structural = set(part.block_of[Cj.indices].tolist()) | set(part.block_of[Aj.indices].tolist())
        for ij_blk in structural:
            S[ij_blk] += (inf_norm(F.block(ij_blk, j)) + inf_norm(Aj[off[ij_blk]:off[ij_blk + 1]])) * tnorm
        q = Uc[:, a:b] @ tj
        for k in upper_by_col.get(j, []):
            rows_k = lower_by_col.get(k)
            if not rows_k:
                continue
            w = F.diag_blocks[k].solve(q[off[k]:off[k + 1]])
            R += Lc[:, off[k]:off[k + 1]] @ w
            wn = inf_norm(w)
            for i in rows_k:
                structural.add(i)
                S[i] += lower_norms[(i, k)] * wn
        for i in sorted(structural):
            values[(i, j)] = inf_norm(R[off[i]:off[i + 1]])
            bounds[(i, j)] = FILTER_TOL * S[i]
    return FilteringReport(res, rel, values, bounds)


def assemble_preconditioner_dense(F: BlockFactorization, cap: int = DENSE_ASSEMBLY_CAP) -> np.ndarray:
    """Dense ``M = (L + D) D^{-1} (U + D)``; refuses above ``cap`` unknowns."""
    n = F.n
    if n > cap:
        raise CapExceeded(f"dense assembly of n={n} exceeds the cap of {cap}")
    D = F.diagonal.toarray()
    off = F.partition.offsets
    Dinv = np.zeros((n, n))
    for k, d in enumerate(F.diag_blocks):
        a, b = off[k], off[k + 1]
        Dinv[a:b, a:b] = d.solve(np.eye(b - a))
    return (F.lower.toarray() + D) @ Dinv @ (F.upper.toarray() + D)


def _block_inf_norms(M, part: BlockPartition) -> dict[tuple[int, int], float]:
    """``||M_ij||_inf`` for every block holding a stored entry."""
    coo = sp.coo_matrix(M)
    if coo.nnz == 0:
        return {}
    bo = part.block_of
    N = part.num_blocks
    # absolute row sums restricted to each block column, then max over rows of a block row
    rs = sp.coo_matrix((np.abs(coo.data), (coo.row, bo[coo.col])), shape=(M.shape[0], N)).tocsr()
    rs.sum_duplicates()
    rs = rs.tocoo()
    keys = bo[rs.row].astype(np.int64) * N + rs.col
    order = np.argsort(keys, kind="stable")
    keys, vals = keys[order], rs.data[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    maxima = np.maximum.reduceat(vals, starts)
    return {(int(k // N), int(k % N)): float(m) for k, m in zip(keys[starts], maxima)}


def blockwise_deviation(F: BlockFactorization, E: BlockFactorization) -> float:
    """Largest ``||C_ij(F) - C_ij(E)||_inf / ||C_ij(E)||_inf`` over all blocks
    present in either factorization (``inf`` where only ``F`` has a block)."""
    diff = _block_inf_norms(canonical(F.combined - E.combined), F.partition)
    ref = _block_inf_norms(E.combined, E.partition)
    worst = 0.0
    for ij, d in diff.items():
        base = ref.get(ij, 0.0)
        worst = max(worst, d / base if base > 0 else np.inf)
    return worst


def dump_factorization(F: BlockFactorization, directory, partition_ref: str | None = None) -> Path:
    """Write every block as Matrix Market plus a ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for k, d in enumerate(F.diag_blocks):
        name = f"D_{k}.mtx"
        mm_write(out / name, d.matrix)
        files[name] = [k, k]
    for prefix, blocks in (("L", F.lower_blocks), ("U", F.upper_blocks)):
        for (i, j), blk in sorted(blocks.items()):
            name = f"{prefix}_{i}_{j}.mtx"
            mm_write(out / name, blk)
            files[name] = [i, j]
    manifest = {
        "variant": F.variant,
        "strategy": F.strategy,
        "partition": partition_ref,
        "n": F.n,
        "num_blocks": F.partition.num_blocks,
        "blocks": files,
        "fbar_residuals": {f"{k},{j}": f.residual for (k, j), f in sorted(F.fbar.items())},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path

