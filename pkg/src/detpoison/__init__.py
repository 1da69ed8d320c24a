"""Dataset-poisoning toolkit for object detection.

Implements four label/image poisoning transforms (object generation,
regional and global misclassification, object disappearance), an evaluation
suite for attacked detectors, and an entropy-based run-time defense that
flags images carrying a trigger.
"""

from .errors import (
    BoxError,
    BridgeError,
    CalibrationError,
    ConfigError,
    DatasetValidationError,
    EligibilityError,
    GenerationError,
    InfeasibleError,
    MetricsError,
    ParseError,
    PlacementError,
    ProtocolError,
    RasterError,
    ToolkitError,
)
from .geometry import BBox, clamp_placement, iou
from .raster import TriggerPatch, blend_patch, chessboard, place_and_blend

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BoxError",
    "BridgeError",
    "CalibrationError",
    "ConfigError",
    "DatasetValidationError",
    "EligibilityError",
    "GenerationError",
    "InfeasibleError",
    "MetricsError",
    "ParseError",
    "PlacementError",
    "ProtocolError",
    "RasterError",
    "ToolkitError",
    "TriggerPatch",
    "blend_patch",
    "chessboard",
    "clamp_placement",
    "iou",
    "place_and_blend",
    "__version__",
]
