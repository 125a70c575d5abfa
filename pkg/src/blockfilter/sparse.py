"""
CSR storage, kernels, symmetric permutation, block extraction and
Matrix Market I/O.

Matrices are ``scipy.sparse.csr_matrix`` objects in canonical form: float64
values, sorted column indices inside each row, no duplicates, and no stored
entry of magnitude <= ``DROP_TOLERANCE``. Every kernel here returns canonical
matrices, so the result of any operation can be fed to any other.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import DimensionMismatch, MatrixMarketError

# underflow guard only; no magnitude-based sparsification anywhere
DROP_TOLERANCE = 1e-300

SparseMatrix = sp.csr_matrix


def canonical(A) -> sp.csr_matrix:
    """Return ``A`` as a canonical float64 CSR matrix (always a new object)."""
    if sp.issparse(A):
        A = sp.csr_matrix(A, dtype=np.float64, copy=True)
    else:
        A = sp.csr_matrix(np.asarray(A, dtype=np.float64))
    A.sum_duplicates()
    if A.nnz:
        A.data[np.abs(A.data) <= DROP_TOLERANCE] = 0.0
        A.eliminate_zeros()
    A.sort_indices()
    A.indptr = A.indptr.astype(np.int64, copy=False)
    A.indices = A.indices.astype(np.int64, copy=False)
    return A


def empty(nrows: int, ncols: int) -> sp.csr_matrix:
    return sp.csr_matrix((nrows, ncols), dtype=np.float64)


def is_structurally_zero(A) -> bool:
    if sp.issparse(A):
        return A.nnz == 0
    return not np.any(np.abs(A) > DROP_TOLERANCE)


def inf_norm(A) -> float:
    """Maximum absolute row sum (``max |x|`` for vectors)."""
    if sp.issparse(A):
        if A.nnz == 0:
            return 0.0
        return float(np.max(abs(A).sum(axis=1)))
    A = np.asarray(A)
    if A.size == 0:
        return 0.0
    if A.ndim == 1:
        return float(np.max(np.abs(A)))
    return float(np.max(np.sum(np.abs(A), axis=1)))


@dataclass(frozen=True)
class Permutation:
    """Reordering of ``n`` indices.

    ``forward[new] = old``: the permuted matrix has
    ``(P A P^T)[i, j] = A[forward[i], forward[j]]``, and a vector is permuted
    as ``x[forward]``. ``inverse[old] = new``.
    """

    forward: np.ndarray
    inverse: np.ndarray

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=np.int64)
        n = fwd.size
        if n and (fwd.min() < 0 or fwd.max() >= n or np.unique(fwd).size != n):
            raise ValueError("forward map is not a bijection on [0, n)")
        inv = np.asarray(self.inverse, dtype=np.int64)
        if inv.shape != fwd.shape or not np.array_equal(inv[fwd], np.arange(n)):
            raise ValueError("inverse does not invert forward")
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "inverse", inv)

    @classmethod
    def from_forward(cls, forward) -> "Permutation":
        fwd = np.asarray(forward, dtype=np.int64)
        n = fwd.size
        if n and (fwd.min() < 0 or fwd.max() >= n or np.unique(fwd).size != n):
            raise ValueError("forward map is not a bijection on [0, n)")
        inv = np.empty(n, dtype=np.int64)
        inv[fwd] = np.arange(n)
        return cls(fwd, inv)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        ar = np.arange(n, dtype=np.int64)
        return cls(ar, ar.copy())

    @property
    def n(self) -> int:
        return int(self.forward.size)

    def inverted(self) -> "Permutation":
        return Permutation(self.inverse, self.forward)

    def apply(self, x) -> np.ndarray:
        """Vector in the original ordering -> vector in the permuted ordering."""
        return np.asarray(x)[self.forward]

    def unapply(self, y) -> np.ndarray:
        return np.asarray(y)[self.inverse]


def spmv(A: sp.csr_matrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"spmv: matrix has {A.shape[1]} columns, vector has shape {x.shape}")
    return A @ x


def permute_symmetric(A: sp.csr_matrix, p: Permutation) -> sp.csr_matrix:
    """Return ``P A P^T`` (see :class:`Permutation` for the convention)."""
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"permute_symmetric needs a square matrix, got {A.shape}")
    if p.n != A.shape[0]:
        raise DimensionMismatch(f"permutation of size {p.n} for matrix of size {A.shape[0]}")
    coo = sp.csr_matrix(A).tocoo()
    rows = p.inverse[coo.row]
    cols = p.inverse[coo.col]
    return canonical(sp.csr_matrix((coo.data, (rows, cols)), shape=A.shape))


def block_extract(A: sp.csr_matrix, part, i: int, j: int) -> sp.csr_matrix:
    """Block ``A_ij`` of a matrix already in the partition's ordering."""
    N = part.num_blocks
    if not (0 <= i < N and 0 <= j < N):
        raise IndexError(f"block ({i}, {j}) out of range for {N} blocks")
    off = part.offsets
    return canonical(A[off[i]:off[i + 1], off[j]:off[j + 1]])


def _check_same_shape(A, B, op):
    if A.shape != B.shape:
        raise DimensionMismatch(f"{op}: shapes {A.shape} and {B.shape} differ")


def sparse_add(A, B) -> sp.csr_matrix:
    _check_same_shape(A, B, "sparse_add")
    return canonical(A + B)


def sparse_subtract(A, B) -> sp.csr_matrix:
    _check_same_shape(A, B, "sparse_subtract")
    return canonical(A - B)


def sparse_matmul(A, B) -> sp.csr_matrix:
    if A.shape[1] != B.shape[0]:
        raise DimensionMismatch(f"sparse_matmul: {A.shape} @ {B.shape}")
    return canonical(A @ B)


# -- Matrix Market ----------------------------------------------------------

_BANNER = "%%matrixmarket"


def _check_header(text: str, source) -> str:
    first = text.lstrip().splitlines()[:1]
    if not first or not first[0].lower().startswith(_BANNER):
        raise MatrixMarketError(f"{source}: missing %%MatrixMarket banner")
    fields = first[0].lower().split()
    if len(fields) != 5:
        raise MatrixMarketError(f"{source}: malformed banner {first[0]!r}")
    _, obj, fmt, field, symmetry = fields
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"{source}: only 'matrix coordinate' files are supported")
    if field not in ("real", "double", "integer"):
        raise MatrixMarketError(f"{source}: unsupported field {field!r}")
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"{source}: unsupported symmetry {symmetry!r}")
    return symmetry


def mm_read(path) -> sp.csr_matrix:
    """Read a real coordinate Matrix Market file.

    Symmetric storage is expanded, duplicate entries are summed.
    """
    path = Path(path)
    text = path.read_text()
    _check_header(text, path)
    try:
        coo = scipy.io.mmread(io.StringIO(text))
    except (ValueError, IndexError, OverflowError) as exc:
        raise MatrixMarketError(f"{path}: {exc}") from exc
    if not sp.issparse(coo):
        raise MatrixMarketError(f"{path}: expected a sparse coordinate matrix")
    return canonical(coo)


def mm_write(path, A, comment: str | None = None) -> None:
    """Write ``A`` in general coordinate format with 17 significant digits.

    Entries are written row by row in column order, so equal matrices give
    byte-identical files.
    """
    A = canonical(A)
    coo = A.tocoo()
    lines = ["%%MatrixMarket matrix coordinate real general"]
    if comment:
        lines.extend(f"% {c}" for c in comment.splitlines())
    lines.append(f"{A.shape[0]} {A.shape[1]} {A.nnz}")
    lines.extend(
        f"{r + 1} {c + 1} {v:.16e}" for r, c, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())
    )
    Path(path).write_text("\n".join(lines) + "\n")
