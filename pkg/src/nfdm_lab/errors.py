"""Exception hierarchy shared by every module of the package."""


class NfdmLabError(Exception):
    """Base class for all errors raised by the package."""


class InvalidArgumentError(NfdmLabError, ValueError):
    """An argument is malformed (wrong length, NaN, negative count, ...)."""


class ContractError(NfdmLabError):
    """A value violates the contract of the operation (e.g. wrong unit flag)."""


class PreconditionError(ContractError):
    """The inputs are individually valid but inconsistent with each other."""


class NumericalDomainError(NfdmLabError, ArithmeticError):
    """A quantity left the domain where the mathematics is defined."""


class ConvergenceError(NfdmLabError, RuntimeError):
    """An iterative procedure did not converge within its budget."""


class ConfigError(NfdmLabError, ValueError):
    """An experiment configuration is invalid."""


class DataError(NfdmLabError, ValueError):
    """Measured data are inconsistent with the estimator's assumptions."""


class UnreachablePowerError(ConvergenceError):
    """The requested launch power lies above what the transmitter can launch.

    ``ceiling_dbm`` is the highest power seen before the power stopped rising.
    """

    def __init__(self, message: str, ceiling_dbm: float):
        super().__init__(message)
        self.ceiling_dbm = ceiling_dbm
