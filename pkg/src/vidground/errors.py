"""Exception types shared across the toolkit."""


class VidgroundError(Exception):
    """Base class for all toolkit errors."""


class FormatError(VidgroundError):
    """A binary or text file does not match its declared format."""


class DataError(VidgroundError):
    """File parsed but contains invalid values (non-finite, out of range)."""


class ParseError(VidgroundError):
    """A text line could not be parsed; message carries the line number."""


class DimensionError(VidgroundError):
    """Array shapes inconsistent with the configured dimensions."""


class EmptyInputError(VidgroundError):
    """An operation received an empty sequence it cannot handle."""


class VocabMismatchError(VidgroundError):
    """Checkpoint was trained against a different vocabulary."""


class UndefinedMetricError(VidgroundError):
    """Metric is undefined for the given inputs (e.g. an empty side)."""


class DegenerateDesignError(VidgroundError):
    """Regression design matrix has rank zero."""


class InfeasibleAlignmentError(VidgroundError):
    """More steps to place than available time slots."""
