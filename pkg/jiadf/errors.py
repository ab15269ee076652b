"""Exception hierarchy shared by every jiadf module."""


class JIADFError(Exception):
    """Base class for all errors raised by the package"""


class DimensionError(JIADFError, ValueError):
    """Operand shapes do not fit the operation"""


class NonFiniteError(JIADFError, ArithmeticError):
    """An operation produced NaN or Inf"""


class DegenerateProbabilityError(JIADFError, ArithmeticError):
    """A probability of exactly zero was fed to a logarithm"""


class GraphStateError(JIADFError, RuntimeError):
    """A graph was used in a way its lifecycle does not allow"""


class UndefinedMetricError(JIADFError, ValueError):
    """A ranking metric is undefined for the given labels"""


class DataFormatError(JIADFError, ValueError):
    """A dataset file or table does not match the expected format"""

    def __init__(self, message: str, line: int = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(JIADFError, ValueError):
    """A checkpoint is corrupt or incompatible"""


class ConfigError(JIADFError, ValueError):
    """Configuration failed validation"""


class NumericalFailure(JIADFError):
    """Training or gradient verification hit a numeric failure"""


class LabelError(JIADFError, ValueError):
    """A class index lies outside [0, N)"""
