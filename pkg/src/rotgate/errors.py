"""Exception types shared across the package."""


class NotSkewSymmetricError(ValueError):
    """Matrix handed to vee() is not skew-symmetric within tolerance."""


class NumericalDomainError(ValueError):
    """A numerical quantity left its mathematically valid domain."""


class SingularJacobianError(ValueError):
    """Rotation Jacobian is singular (angle at or beyond a full turn)."""


class LengthMismatchError(ValueError):
    """Paired sequences have different lengths."""


class EmptyInputError(ValueError):
    """An operation received an empty collection it cannot work with."""


class NonFiniteObjectiveError(ValueError):
    """Objective returned NaN or infinity during optimization."""


class AngleOutOfRangeError(ValueError):
    """Pose angle outside the supported [-pi/2, pi/2] range."""


class ShapeMismatchError(ValueError):
    """Array shapes are inconsistent with the configured dimensions."""


class EmptyDatasetError(ValueError):
    """Training was asked to run on an empty dataset."""


class NonFiniteLossError(RuntimeError):
    """Training loss became NaN or infinite."""


class EmptyScoresError(ValueError):
    """A metric received an empty score list."""


class InsufficientImpostorsError(ValueError):
    """Too few impostor scores to resolve the requested FAR target."""


class DuplicateGalleryIdentityError(ValueError):
    """Identification gallery contains an identity more than once."""


class InvalidConfigError(ValueError):
    """Configuration file or parameters failed validation."""
