"""Exception types raised across the package."""


class MesofolioError(ValueError):
    """Base class for all recoverable pipeline errors."""

    #: short machine-readable tag echoed into CLI error records
    code = "error"


class DataError(MesofolioError):
    code = "data"


class PreconditionError(MesofolioError):
    code = "precondition"


class DecompositionError(MesofolioError):
    code = "decomposition"


class SingularCovarianceError(MesofolioError):
    code = "singular-covariance"


class InfeasibleError(MesofolioError):
    code = "infeasible"


class ConvergenceError(MesofolioError):
    code = "convergence"
