"""Exception types raised across the pipeline.

Every error the package raises on purpose derives from ``D3ffError`` so
callers (and the CLI) can catch one base class.
"""


class D3ffError(Exception):
    """Base class for all errors raised by this package."""


# ---- shape loading / sampling ----

class UnreadableFile(D3ffError):
    """File is missing, has an unknown format, or cannot be parsed."""


class MalformedGeometry(D3ffError):
    """Geometry is invalid: non-finite coordinate or out-of-range face index."""


class EmptyShape(D3ffError):
    """The file contains zero vertices."""


class DegenerateShape(D3ffError):
    """All vertices coincide; the shape cannot be normalized."""


class CountTooLarge(D3ffError):
    """Requested sample count is outside [1, vertex count]."""


# ---- rendering ----

class NoFaces(D3ffError):
    """Mesh rasterization requires faces."""


# ---- feature store ----

class IoError(D3ffError):
    """Feature file or sidecar could not be written or read."""


class BadMagic(D3ffError):
    """Feature file does not start with the D3FF magic bytes."""


class VersionUnsupported(D3ffError):
    """Feature file declares an unknown version or dtype code."""


class TruncatedPayload(D3ffError):
    """Payload byte count does not match the dimensions in the header."""


class InvalidFeatureMap(D3ffError):
    """Feature map violates its invariants (non-finite data, bad metadata)."""


class ManifestError(D3ffError):
    """Feature manifest is incomplete or inconsistent."""


# ---- distillation ----

class WindowMismatch(D3ffError):
    """Provided timestep maps do not cover the aggregation window."""


class ShapeMismatch(D3ffError):
    """Feature maps disagree on (H, W, C) where they must match."""


class ResolutionMismatch(D3ffError):
    """Feature map resolution differs from the view resolution."""


# ---- matching / evaluation ----

class DimMismatch(D3ffError):
    """Descriptor dimensions differ between the two sides of an operation."""


class MissingGroundTruth(D3ffError):
    """Ground-truth map lacks an entry for an evaluated source point."""


class KTooLarge(D3ffError):
    """Requested more clusters than there are points."""
