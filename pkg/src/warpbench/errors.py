"""Exception hierarchy shared by all warpbench modules."""


class WarpbenchError(Exception):
    """Base class for all toolkit errors."""


class FormatError(WarpbenchError):
    """A file could not be parsed or serialized (bad magic, truncation, ...)."""


class ShapeError(WarpbenchError):
    """Array or raster dimensions are invalid or inconsistent."""


class ValidationError(WarpbenchError):
    """Values violate a type invariant (non-finite floats, bad mask bits, ...)."""


class ConfigError(WarpbenchError):
    """A configuration is self-contradictory or unusable."""


class InversionError(WarpbenchError):
    """Warp-field inversion has degenerate input (too few / collinear samples)."""


class ProjectionError(WarpbenchError):
    """Mesh projection is degenerate (surface edge-on to the camera)."""


class ProbeError(WarpbenchError):
    """A gradient-check probe produced a non-finite loss value."""
