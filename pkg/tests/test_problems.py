import numpy as np
import pytest

from blockfilter import problems
from blockfilter.errors import DimensionMismatch
from blockfilter.problems import ProblemSpec, filtering_vector, generate, write_vector
from blockfilter.sparse import canonical, mm_write


def stencil_oracle(nx, ny, cx=1.0, cy=1.0):
    """Direct loop assembly of the 5-point operator."""
    n = nx * ny
    A = np.zeros((n, n))
    for iy in range(ny):
        for ix in range(nx):
            r = ix + nx * iy
            A[r, r] = 2 * cx + 2 * cy
            for dx, dy, c in ((1, 0, cx), (-1, 0, cx), (0, 1, cy), (0, -1, cy)):
                jx, jy = ix + dx, iy + dy
                if 0 <= jx < nx and 0 <= jy < ny:
                    A[r, jx + nx * jy] = -c
    return A


def test_poisson_1x1():
    np.testing.assert_array_equal(problems.poisson2d(1, 1).toarray(), [[4.0]])


def test_poisson_3x3_stencil():
    A = problems.poisson2d(3, 3)
    np.testing.assert_array_equal(A.toarray(), stencil_oracle(3, 3))
    # the centre unknown has all four neighbours inside the grid
    assert A.toarray()[4].sum() == 0.0


def test_aniso_matches_oracle():
    np.testing.assert_array_equal(problems.aniso2d(4, 3, 0.01).toarray(), stencil_oracle(4, 3, 0.01, 1.0))


def test_poisson3d_stencil():
    A = problems.poisson3d(3, 3, 3).toarray()
    assert A.shape == (27, 27)
    assert A[13, 13] == 6.0 and A[13].sum() == 0.0
    assert np.count_nonzero(A[13]) == 7


@pytest.mark.parametrize("A", [problems.poisson2d(7, 5), problems.poisson3d(4, 3, 2), problems.aniso2d(6, 6, 10.0)])
def test_symmetric_to_the_bit(A):
    assert (A != A.T).nnz == 0
    assert np.all(np.linalg.eigvalsh(A.toarray()) > 0)


def test_convdiff_is_nonsymmetric_and_dominant():
    A = problems.convdiff2d(6, 6, 5.0)
    assert (A != A.T).nnz > 0
    d = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    assert np.all(d >= off)


def test_random_dd_dominant_and_reproducible():
    A = problems.random_dd(20, seed=11)
    B = problems.random_dd(20, seed=11)
    assert (A != B).nnz == 0
    d = np.abs(A.diagonal())
    off = np.asarray(abs(A).sum(axis=1)).ravel() - d
    assert np.all(d > off)
    assert (problems.random_dd(20, seed=12) != A).nnz > 0


def test_random_spd():
    A = problems.random_spd(30, seed=2)
    assert (A != A.T).nnz == 0
    assert np.linalg.eigvalsh(A.toarray()).min() > 0


def test_matrix_market_bytes_reproducible(tmp_path):
    spec = ProblemSpec("random_dd", n=25, seed=4)
    mm_write(tmp_path / "a.mtx", generate(spec))
    mm_write(tmp_path / "b.mtx", generate(spec))
    assert (tmp_path / "a.mtx").read_bytes() == (tmp_path / "b.mtx").read_bytes()


@pytest.mark.parametrize(
    "kw",
    [
        {"kind": "poisson2d", "dims": (3,)},
        {"kind": "poisson2d", "dims": (0, 3)},
        {"kind": "poisson3d", "dims": (2, 2)},
        {"kind": "random_dd"},
        {"kind": "random_dd", "n": 0},
        {"kind": "heat"},
        {"kind": "aniso2d", "dims": (2, 2), "epsilon": 0.0},
    ],
)
def test_problem_spec_validation(kw):
    with pytest.raises(ValueError):
        ProblemSpec(**kw)


def test_generate_dispatch():
    assert generate(ProblemSpec("poisson3d", (2, 2, 2))).shape == (8, 8)
    assert generate(ProblemSpec("convdiff2d", (3, 4), convection=2.0)).shape == (12, 12)
    assert ProblemSpec("aniso2d", (3, 4)).size == 12


def test_filtering_vectors(tmp_path):
    np.testing.assert_array_equal(filtering_vector("ones", 4), np.ones(4))
    a = filtering_vector("random_with_zeros", 10, seed=7, zero_fraction=0.3)
    b = filtering_vector("random_with_zeros", 10, seed=7, zero_fraction=0.3)
    np.testing.assert_array_equal(a, b)
    assert np.count_nonzero(a == 0) == 3
    assert np.count_nonzero(filtering_vector("random_with_zeros", 10, seed=7, zero_fraction=0.0) == 0) == 1
    r = filtering_vector("random_nonzero", 50, seed=1)
    assert np.all(np.abs(r) >= 0.5)
    x = np.array([0.1, -2.5, 1e-300, 3.0])
    write_vector(tmp_path / "t.txt", x)
    np.testing.assert_array_equal(filtering_vector("custom", 4, path=tmp_path / "t.txt"), x)
    with pytest.raises(DimensionMismatch):
        filtering_vector("custom", 5, path=tmp_path / "t.txt")
    with pytest.raises(ValueError):
        filtering_vector("sine", 5)
    with pytest.raises(ValueError):
        filtering_vector("ones", 0)
