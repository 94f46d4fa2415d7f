"""Cascaded modular boosted-ferns regression for model-based 3D face tracking."""

from facecascade.errors import (
    BehindCameraError,
    ConfigurationError,
    ConvergenceError,
    DegenerateConfigurationError,
    DegenerateTargetError,
    DimensionError,
    FaceCascadeError,
    ModelFormatError,
    SingularSystemError,
    TriangulationError,
)

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError",
    "ConfigurationError",
    "ConvergenceError",
    "DegenerateConfigurationError",
    "DegenerateTargetError",
    "DimensionError",
    "FaceCascadeError",
    "ModelFormatError",
    "SingularSystemError",
    "TriangulationError",
    "__version__",
]
