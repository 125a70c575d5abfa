"""Deterministic test matrices and filtering vectors.

Grid problems use Dirichlet boundaries eliminated from the system, so only
interior unknowns appear; unknown ``(ix, iy[, iz])`` has index
``ix + nx * (iy + ny * iz)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch
from .sparse import canonical

KINDS = ("poisson2d", "poisson3d", "aniso2d", "convdiff2d", "random_spd", "random_dd")
FILTER_KINDS = ("ones", "random_nonzero", "random_with_zeros")


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    dims: tuple[int, ...] = ()
    n: int | None = None
    epsilon: float = 1.0
    convection: float = 1.0
    nnz_per_row: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        want = {"poisson2d": 2, "aniso2d": 2, "convdiff2d": 2, "poisson3d": 3}.get(self.kind)
        if want is not None:
            if len(self.dims) != want or any(int(d) < 1 for d in self.dims):
                raise ValueError(f"{self.kind} needs {want} positive grid dimensions, got {self.dims}")
        elif self.n is None or self.n < 1:
            raise ValueError(f"{self.kind} needs a positive size n")
        if self.epsilon <= 0:
            raise ValueError("anisotropy ratio must be positive")

    @property
    def size(self) -> int:
        return int(np.prod(self.dims)) if self.dims else int(self.n)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dims": list(self.dims),
            "n": self.size,
            "epsilon": self.epsilon,
            "convection": self.convection,
            "nnz_per_row": self.nnz_per_row,
            "seed": self.seed,
        }


def _second_difference(m: int, scale: float = 1.0) -> sp.csr_matrix:
    return sp.diags([-scale, 2.0 * scale, -scale], [-1, 0, 1], shape=(m, m), format="csr")


def poisson2d(nx: int, ny: int) -> sp.csr_matrix:
    """5-point Laplacian (stencil 4, -1) on an ``nx x ny`` interior grid."""
    return aniso2d(nx, ny, 1.0)


def aniso2d(nx: int, ny: int, epsilon: float) -> sp.csr_matrix:
    """``-epsilon u_xx - u_yy``: diagonal ``2 epsilon + 2``, x-neighbours
    ``-epsilon``, y-neighbours ``-1``."""
    A = sp.kron(sp.identity(ny), _second_difference(nx, epsilon)) + sp.kron(
        _second_difference(ny), sp.identity(nx)
    )
    return canonical(A)


def poisson3d(nx: int, ny: int, nz: int) -> sp.csr_matrix:
    """7-point Laplacian (stencil 6, -1)."""
    Ix, Iy, Iz = (sp.identity(m) for m in (nx, ny, nz))
    A = (
        sp.kron(Iz, sp.kron(Iy, _second_difference(nx)))
        + sp.kron(Iz, sp.kron(_second_difference(ny), Ix))
        + sp.kron(_second_difference(nz), sp.kron(Iy, Ix))
    )
    return canonical(A)


def convdiff2d(nx: int, ny: int, convection: float) -> sp.csr_matrix:
    """``-lap u + c (u_x + u_y)`` scaled by ``h^2``, first-order upwind for
    ``c >= 0`` (backward differences), ``h = 1 / (nx + 1)``."""
    h = 1.0 / (nx + 1)
    ch = convection * h

    def upwind(m):
        if ch >= 0:
            return sp.diags([-ch, ch], [-1, 0], shape=(m, m))
        return sp.diags([ch, -ch], [0, 1], shape=(m, m))

    A = poisson2d(nx, ny) + sp.kron(sp.identity(ny), upwind(nx)) + sp.kron(upwind(ny), sp.identity(nx))
    return canonical(A)


def _random_offdiagonal(n: int, nnz_per_row: int, rng) -> sp.csr_matrix:
    k = min(nnz_per_row, n - 1)
    rows, cols = [], []
    for i in range(n):
        choice = rng.choice(n - 1, size=k, replace=False)
        choice = choice + (choice >= i)
        rows.append(np.full(k, i))
        cols.append(choice)
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=int)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=int)
    vals = rng.uniform(-1.0, 1.0, size=rows.size)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def random_dd(n: int, nnz_per_row: int = 5, seed: int = 0) -> sp.csr_matrix:
    """Unsymmetric, strictly row diagonally dominant with positive diagonal."""
    rng = np.random.default_rng(seed)
    B = _random_offdiagonal(n, nnz_per_row, rng)
    rowsum = np.asarray(abs(B).sum(axis=1)).ravel()
    return canonical(B + sp.diags(rowsum + rng.uniform(0.5, 1.5, size=n)))


def random_spd(n: int, nnz_per_row: int = 5, seed: int = 0) -> sp.csr_matrix:
    """Symmetric and strictly diagonally dominant with positive diagonal,
    hence SPD."""
    rng = np.random.default_rng(seed)
    B = _random_offdiagonal(n, max(1, nnz_per_row // 2), rng)
    S = B + B.T
    rowsum = np.asarray(abs(S).sum(axis=1)).ravel()
    return canonical(S + sp.diags(rowsum + rng.uniform(0.5, 1.5, size=n)))


def generate(spec: ProblemSpec) -> sp.csr_matrix:
    if spec.kind == "poisson2d":
        return poisson2d(*spec.dims)
    if spec.kind == "poisson3d":
        return poisson3d(*spec.dims)
    if spec.kind == "aniso2d":
        return aniso2d(*spec.dims, spec.epsilon)
    if spec.kind == "convdiff2d":
        return convdiff2d(*spec.dims, spec.convection)
    if spec.kind == "random_spd":
        return random_spd(spec.n, spec.nnz_per_row, spec.seed)
    return random_dd(spec.n, spec.nnz_per_row, spec.seed)


def filtering_vector(kind: str, n: int, seed: int = 0, zero_fraction: float = 0.3, path=None) -> np.ndarray:
    """Filtering vector in the original (unpermuted) ordering.

    ``ones`` is the default. Random kinds draw magnitudes in ``[0.5, 1.5]``
    with random signs; ``random_with_zeros`` then zeroes
    ``round(zero_fraction * n)`` entries (at least one). ``custom`` reads one
    float per line from ``path``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if kind == "ones":
        return np.ones(n)
    if kind == "custom":
        if path is None:
            raise ValueError("custom filter vector needs a path")
        t = read_vector(path)
        if t.size != n:
            raise DimensionMismatch(f"{path}: {t.size} values, expected {n}")
        return t
    if kind not in FILTER_KINDS:
        raise ValueError(f"unknown filter vector kind {kind!r}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.5, 1.5, size=n) * rng.choice([-1.0, 1.0], size=n)
    if kind == "random_with_zeros":
        nz = min(n, max(1, int(round(zero_fraction * n))))
        t[rng.choice(n, size=nz, replace=False)] = 0.0
    return t


def read_vector(path) -> np.ndarray:
    text = Path(path).read_text().split()
    try:
        return np.array([float(x) for x in text])
    except ValueError as exc:
        raise ValueError(f"{path}: not a list of floats ({exc})") from exc


def write_vector(path, x) -> None:
    Path(path).write_text("".join(f"{v:.16e}\n" for v in np.asarray(x, dtype=float)))
