"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class BoxError(ToolkitError):
    """A bounding box violates its geometric invariants."""


class RasterError(ToolkitError):
    """A raster has invalid shape, dtype, or value range."""


class PlacementError(ToolkitError):
    """A trigger patch cannot be placed inside the image."""


class ParseError(ToolkitError):
    """An annotation file could not be parsed; message names file and element."""


class DatasetValidationError(ToolkitError):
    """A dataset record violates its invariants; message names the record."""


class GenerationError(ToolkitError):
    """Synthetic scene generation could not satisfy its placement constraints."""


class InfeasibleError(ToolkitError):
    """Poison target selection cannot be satisfied; message names the shortfall."""


class EligibilityError(ToolkitError):
    """An image has no objects in scope for the requested attack."""


class ProtocolError(ToolkitError):
    """A detector wire record violates the line protocol schema."""


class BridgeError(ToolkitError):
    """An external detector process failed; message carries a stderr excerpt."""


class MetricsError(ToolkitError):
    """Metric computation received inconsistent or insufficient inputs."""


class CalibrationError(ToolkitError):
    """Defense calibration has too few samples or inconsistent inputs."""


class ConfigError(ToolkitError):
    """A run configuration is missing keys or holds invalid values."""
