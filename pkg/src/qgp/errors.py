"""Exception hierarchy shared by every module."""


class QGPError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(QGPError):
    """Failure of a numerical precondition (maps to CLI exit code 3)."""


class NonHermitian(NumericalError, ValueError):
    pass


class NoConvergence(NumericalError):
    pass


class NotPositiveDefinite(NumericalError, ValueError):
    pass


class NotPSD(NumericalError, ValueError):
    pass


class ZeroMatrix(NumericalError, ValueError):
    pass


class DimensionMismatch(QGPError, ValueError):
    pass


class WidthMismatch(DimensionMismatch):
    pass


class NonUnitary(NumericalError, ValueError):
    pass


# Gate-level name used by the simulator.
NonUnitaryBlock = NonUnitary


class NoMeasurement(QGPError, ValueError):
    pass


class TooWide(QGPError, ValueError):
    pass


class ContainsMeasurement(QGPError, ValueError):
    pass


class CTooLarge(NumericalError, ValueError):
    pass


class SingularAfterTruncation(NumericalError):
    pass


class ParameterCountMismatch(QGPError, ValueError):
    pass


class UnknownChannel(QGPError, KeyError):
    pass


class EmptyChannel(QGPError, ValueError):
    pass


class CountsExceedGrid(QGPError, ValueError):
    pass


class ConfigError(QGPError, ValueError):
    """Invalid experiment configuration (maps to CLI exit code 2)."""
