"""Block filtering preconditioner ``M = (L + D) D^{-1} (U + D)`` with ``M t = A t``."""

from .errors import (
    BlockFilterError,
    BreakdownError,
    CapExceeded,
    DimensionMismatch,
    FbarConstructionFailure,
    IndefinitenessDetected,
    InconsistentVectors,
    MatrixMarketError,
    NearSingularProjector,
    NonSymmetricBlock,
    PartitionError,
    SingularDiagonalBlock,
    SolverError,
    ZeroFilterDirection,
)
from .factor import (
    BlockFactorization,
    DiagonalBlock,
    FilteringReport,
    FilterVector,
    apply_preconditioner,
    assemble_preconditioner_dense,
    blockwise_deviation,
    build_filter_factorization,
    dump_factorization,
    exact_block_ldu,
    factorize,
    filtering_residual,
)
from .fbar import FbarApprox, fbar_deflation, fbar_diagonal_nearest, fbar_symmetrize
from .krylov import SolveReport, SolverParams, block_jacobi_preconditioner, cg, gmres, jacobi_preconditioner
from .partition import (
    BlockPartition,
    TreeNode,
    ValidationReport,
    nested_dissection,
    partition_from_sizes,
    read_partition,
    validate_partition,
    write_partition,
)
from .problems import ProblemSpec, filtering_vector, generate
from .sparse import Permutation, block_extract, canonical, mm_read, mm_write, permute_symmetric, spmv

__version__ = "0.1.0"
