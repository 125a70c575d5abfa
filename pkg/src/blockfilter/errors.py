"""Exception hierarchy shared by all modules."""


class BlockFilterError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(BlockFilterError, ValueError):
    pass


class MatrixMarketError(BlockFilterError, ValueError):
    """Malformed or unsupported Matrix Market input."""


class PartitionError(BlockFilterError, ValueError):
    pass


class SingularDiagonalBlock(BlockFilterError):
    """A pivot block D_kk could not be factorized."""

    def __init__(self, block, message=None):
        self.block = block
        super().__init__(message or f"diagonal block {block} is singular")


class FbarConstructionFailure(BlockFilterError):
    """A sparse inverse approximation missed its filtering residual bound."""

    def __init__(self, block, column=None, message=None):
        self.block = block
        self.column = column
        where = f"({block}, {column})" if column is not None else f"{block}"
        super().__init__(message or f"F-bar construction failed for block {where}")


class InconsistentVectors(FbarConstructionFailure):
    """``v`` is identically zero but ``u`` is not."""

    def __init__(self, message="v is identically zero but u is not"):
        super().__init__(None, message=message)


class ZeroFilterDirection(FbarConstructionFailure):
    def __init__(self, message="deflation direction Z is identically zero"):
        super().__init__(None, message=message)


class NearSingularProjector(FbarConstructionFailure):
    def __init__(self, message):
        super().__init__(None, message=message)


class NonSymmetricBlock(FbarConstructionFailure):
    def __init__(self, message):
        super().__init__(None, message=message)


class CapExceeded(BlockFilterError):
    """Dense assembly refused because the matrix is above the size cap."""


class SolverError(BlockFilterError):
    """Base class for Krylov solver failures; carries the partial report."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class BreakdownError(SolverError):
    pass


class IndefinitenessDetected(SolverError):
    pass
