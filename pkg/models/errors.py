"""
Error hierarchy. ValidationError subclasses describe bad input (CLI exit 2),
EstimationError subclasses describe numerical failures (CLI exit 3).
"""


class MomglmError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(MomglmError):
    pass


class EstimationError(MomglmError):
    pass


# --- Validation ---

class EmptyDataset(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class MissingResponseA(ValidationError):
    pass


class MissingMoment(ValidationError):
    pass


class NonBinaryA(ValidationError):
    pass


class InvalidOrder(ValidationError):
    pass


class NonPSDCovariance(ValidationError):
    pass


class InsufficientSamples(ValidationError):
    pass


class RankDeficientDesign(ValidationError):
    pass


class ConfigInvalid(ValidationError):
    pass


class UnknownLink(ValidationError):
    pass


class UnknownIdentity(ValidationError):
    pass


class TooFewReplicates(ValidationError):
    pass


class DegenerateEstimates(ValidationError):
    pass


class DataFormatError(ValidationError):
    pass


class NonFiniteMoment(ValidationError):
    pass


# --- Estimation ---

class NonFiniteIntegral(EstimationError):
    pass


class SingularSigma(EstimationError):
    pass


class SingularGram(EstimationError):
    pass


class NonMonotoneMap(EstimationError):
    pass


class SingularJacobian(EstimationError):
    pass


class NoConvergence(EstimationError):
    pass


class SingularLinearStage(EstimationError):
    pass


class DegenerateF1(EstimationError):
    pass


class DegenerateG1(EstimationError):
    pass
