"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`AdaptRLError`
so callers (and the CLI) can tell modelling failures apart from bugs.
"""


class AdaptRLError(Exception):
    """Base class for all package errors."""


class ValidationError(AdaptRLError, ValueError):
    """Input violates a documented precondition."""


class NonFiniteInput(ValidationError):
    pass


class DivergentReturn(ValidationError):
    pass


class StageOutOfRange(ValidationError, IndexError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class EmptyInput(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NonPositiveWeight(ValidationError):
    pass


class SingularDesign(AdaptRLError, ArithmeticError):
    """Normal equations could not be solved even after jitter."""


class SingularSystem(SingularDesign):
    pass


class SingularW(SingularDesign):
    pass


class MissingReward(ValidationError):
    pass


class PropensityOutOfRange(ValidationError):
    pass


class PositivityViolation(ValidationError):
    pass


class NoMatchedTrajectories(AdaptRLError):
    pass


class NegativeReward(ValidationError):
    pass


class NotBinaryAction(ValidationError):
    pass


NonBinaryAction = NotBinaryAction


class EmptyStageSample(AdaptRLError):
    pass


class NoAvailableArm(ValidationError):
    pass


class ClipBoundsInvalid(ValidationError):
    pass


class MissingSelectionDistribution(ValidationError):
    pass


class RewardOutOfRange(ValidationError):
    pass


class ConfigInvalid(ValidationError):
    """Configuration file failed strict validation."""
