"""Exception and warning types raised across the package."""

from __future__ import annotations


class SVFactorError(Exception):
    """Base class for all package errors."""

    #: exit code used by the command line front end
    exit_code = 3


class EffectiveSampleTooSmall(SVFactorError):
    """Kernel neighbourhood of the target state holds too little mass."""

    def __init__(self, state: float, effective_size: float, floor: float):
        self.state = state
        self.effective_size = effective_size
        self.floor = floor
        super().__init__(
            f"effective sample size T(s)={effective_size:.4g} at s={state:.6g} "
            f"is below the floor {floor:.4g}; the state lies outside the visited range"
        )


class NotConverged(SVFactorError):
    pass


class SingularEigenvalue(SVFactorError):
    pass


class SingularLoadingGram(SVFactorError):
    pass


class SingularFactorCov(SVFactorError):
    pass


class RankDeficient(SVFactorError):
    pass


class ZeroVariance(SVFactorError):
    pass


class DimensionMismatch(SVFactorError):
    pass


class ZeroDenominator(SVFactorError):
    exit_code = 2


class DataError(SVFactorError):
    """Base for ingestion failures."""

    exit_code = 2


class ParseError(DataError):
    pass


class MissingCell(DataError):
    pass


class MisalignedState(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class IoError(DataError):
    """A report or input file could not be read or written."""


class ConfigError(SVFactorError):
    exit_code = 1


class UnknownCommand(ConfigError):
    pass


class RepeatedEigenvalueWarning(UserWarning):
    """Top eigenvalues are (numerically) tied; eigenvectors are not unique."""


class NumericalWarning(UserWarning):
    pass


class ReportWarning(UserWarning):
    """A report value could not be written faithfully (for example NaN)."""
