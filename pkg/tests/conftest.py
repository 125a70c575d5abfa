import numpy as np
import pytest
import scipy.sparse as sp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sparse(n, density, rng, m=None, dominant=False):
    m = n if m is None else m
    A = sp.random(n, m, density=density, random_state=rng, format="csr")
    A.data = rng.uniform(-1.0, 1.0, A.nnz)
    if dominant:
        rowsum = np.asarray(abs(A).sum(axis=1)).ravel()
        A = A + sp.diags(rowsum + 1.0)
    return sp.csr_matrix(A)
