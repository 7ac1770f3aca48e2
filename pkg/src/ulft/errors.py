"""Exception hierarchy shared by every stage.

Each class carries an ``exit_code`` used by the command line front end.
"""


class UlftError(Exception):
    exit_code = 1


class InputError(UlftError, ValueError):
    """Caller passed arguments that violate a precondition."""

    exit_code = 2


class PixelOutOfBoundsError(InputError):
    pass


class BehindCameraError(UlftError, ValueError):
    """A point lies at or behind the camera plane."""


class GenerationError(UlftError):
    """Procedural scene packing failed."""


class RigError(UlftError):
    """Camera rig could not satisfy the visibility constraint."""


class PreconditionError(UlftError):
    """A stage was invoked before its inputs exist."""

    exit_code = 3


class MissingInputError(PreconditionError):
    pass


class TrainingError(UlftError, FloatingPointError):
    """Loss or gradient became non-finite."""

    exit_code = 4


class CapacityError(UlftError):
    """More batch segments than surrogate slots."""


class BatchingError(UlftError):
    pass


class ClusteringError(UlftError):
    pass


class ReportError(UlftError):
    pass


class HeightError(UlftError):
    pass


class ConfigError(UlftError, ValueError):
    exit_code = 2
