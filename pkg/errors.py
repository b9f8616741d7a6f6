"""
Exceptions raised by the toolkit.

Every error is an AflibError and also a ValueError, so code that only knows
about ValueError still catches them.
"""


class AflibError(ValueError):
    """Base class for all toolkit errors."""


# pde_operator
class ParseError(AflibError):
    pass


class ShapeError(AflibError):
    pass


class OrderError(AflibError):
    pass


class UnknownName(AflibError):
    pass


class NonPositiveScale(AflibError):
    pass


# wave_cone
class DegenerateOperator(AflibError):
    pass


class ZeroVector(AflibError):
    pass


class NotInWaveCone(AflibError):
    pass


# spectral_projection
class NonHomogeneousOperator(AflibError):
    pass


class ConstantRankViolation(AflibError):
    pass


class GridMismatch(AflibError):
    pass


class NonzeroMean(AflibError):
    pass


# integrand / envelope
class OutOfBall(AflibError):
    pass


class MissingSubgradient(AflibError):
    pass


# measure_lab
class MissingRecession(AflibError):
    pass


class OutOfDomain(AflibError):
    pass


class DomainMismatch(AflibError):
    pass


# experiments
class NotInKernel(AflibError):
    pass


class BadTheta(AflibError):
    pass


class HypothesisViolation(AflibError):
    pass


class ConfigError(AflibError):
    """Malformed configuration file, flag value or environment variable."""


class MissingLipschitz(UserWarning):
    """Recession estimated without a Lipschitz constant in A."""
