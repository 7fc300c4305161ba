"""Exception hierarchy shared by every aurk module."""


class AurkError(Exception):
    """Base class for all toolkit errors."""


class FormatError(AurkError, ValueError):
    """A file or record does not follow its documented format."""


class ShapeError(AurkError, ValueError):
    """Array shapes or stream lengths are incompatible."""


class NumericError(AurkError, ValueError):
    """Non-finite values where finite ones are required."""


class DegenerateRegionError(AurkError):
    """A basic RoI polygon has zero area, folds over, or self-intersects."""

    def __init__(self, roi_no: int, reason: str = "zero area"):
        self.roi_no = roi_no
        super().__init__(f"basic RoI {roi_no} is degenerate: {reason}")


class MissingRegionError(AurkError, KeyError):
    """An AU group references a basic RoI that was not supplied."""


class EmptyMaskError(AurkError):
    """A mask that must contain pixels is empty."""


class EmptyDatasetError(AurkError):
    """An aggregate was requested over an empty stream."""


class InsufficientFramesError(AurkError):
    """A video is too short for the requested timeline."""


class InsufficientDataError(AurkError):
    """Too few samples for a statistic."""


class VersionError(AurkError):
    """A checkpoint, cache entry or table does not match the active profile."""


class CacheMissError(AurkError):
    """Box cache entries are absent; run ``aurk partition`` first."""
