"""Exception hierarchy.

Each class carries the CLI exit code it maps to: 2 for bad data or
configuration, 3 for numerical failures.
"""


class FaceCascadeError(Exception):
    exit_code = 2


class DimensionError(FaceCascadeError, ValueError):
    pass


class ConfigurationError(FaceCascadeError, ValueError):
    pass


class ModelFormatError(FaceCascadeError):
    """Corrupt, truncated or unsupported model file."""


class BehindCameraError(FaceCascadeError, ValueError):
    exit_code = 3


class DegenerateTargetError(FaceCascadeError):
    exit_code = 3


class SingularSystemError(FaceCascadeError, ArithmeticError):
    exit_code = 3


class TriangulationError(FaceCascadeError):
    exit_code = 3


class DegenerateConfigurationError(FaceCascadeError):
    exit_code = 3


class ConvergenceError(FaceCascadeError):
    exit_code = 3
