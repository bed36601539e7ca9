"""Exception hierarchy shared across the package."""


class PfaError(Exception):
    """Base class for all errors raised by this package."""


class BehindCameraError(PfaError):
    """A point required to be in front of the camera has depth <= 0."""


class UndefinedInputError(PfaError, ValueError):
    """An operation received input for which its result is undefined."""


class ConfigurationError(PfaError):
    """Inconsistent or invalid configuration of a pipeline component."""


class MeshHashMismatchError(ConfigurationError):
    """An exemplar set was used with a mesh it was not generated from."""


class DegeneracyError(PfaError):
    """A geometric construction collapsed (e.g. zero-extent projection)."""


class SolverError(PfaError):
    """A pose solver received too few or degenerate correspondences."""


class RobustFailureError(SolverError):
    """RANSAC found no hypothesis with enough inliers.

    Carries the best attempt so callers can log diagnostics.
    """

    def __init__(self, message, best_estimate=None, exemplar_reports=None):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.exemplar_reports = exemplar_reports


class MeshError(PfaError):
    """Base class for mesh loading failures."""


class MeshParseError(MeshError):
    """Unparseable mesh file; ``byte_offset`` locates the failure."""

    def __init__(self, message, path=None, byte_offset=None):
        detail = message
        if path is not None:
            detail = f"{path}: {detail}"
        if byte_offset is not None:
            detail = f"{detail} (at byte offset {byte_offset})"
        super().__init__(detail)
        self.path = path
        self.byte_offset = byte_offset


class EmptyMeshError(MeshError):
    """Mesh file contained no usable vertices or faces."""


class DegenerateTriangleError(MeshError):
    """Mesh contains triangles with zero area or repeated vertices."""


class FileFormatError(PfaError):
    """Base class for binary container format failures."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(FileFormatError):
    """File was written with an unsupported format version."""

    def __init__(self, found, expected):
        super().__init__(f"unsupported format version {found}, this build reads version {expected}")
        self.found = found
        self.expected = expected


class TruncationError(FileFormatError):
    """File ended before the advertised payload was complete."""

    def __init__(self, expected_bytes, actual_bytes, context=""):
        msg = f"truncated file: expected {expected_bytes} bytes, got {actual_bytes}"
        if context:
            msg = f"{msg} while reading {context}"
        super().__init__(msg)
        self.expected_bytes = expected_bytes
        self.actual_bytes = actual_bytes


class FlowFileMissingError(PfaError):
    """An externally supplied flow file was not found for a trial."""
