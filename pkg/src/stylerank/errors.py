"""Exception types shared across the package."""


class StyleRankError(Exception):
    """Base class for every error raised by this package."""


class IngestError(StyleRankError):
    """An annotation stream could not be ingested."""


class FormatError(StyleRankError):
    """A file does not match its expected on-disk format."""


class SparsePopulationError(StyleRankError):
    """Comparison sampling could not reach the requested count."""


class DivergenceError(StyleRankError):
    """Training produced a non-finite loss or gradient."""


class UnknownItemError(StyleRankError):
    """A furniture id, image id, scene id, or class name did not resolve."""


class UnrankableItemError(StyleRankError):
    """A query touched a furniture item with no validated images."""


class StaleIndexError(StyleRankError):
    """A caller pinned a generation that the index no longer matches."""
