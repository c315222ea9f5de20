"""Exception hierarchy shared across the package."""


class PrivSplitError(Exception):
    """Base class for all package errors."""


class DimensionError(PrivSplitError, ValueError):
    pass


class UnsupportedHeadError(PrivSplitError, ValueError):
    pass


class EmptyInputError(PrivSplitError, ValueError):
    pass


class ParseError(PrivSplitError, ValueError):
    """Malformed input file. ``row`` is 1-based over data rows when known."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class LabelRangeError(ParseError):
    pass


class StratificationError(PrivSplitError, ValueError):
    pass


class PairSamplingError(PrivSplitError, ValueError):
    pass


class RankError(PrivSplitError, ValueError):
    """Raised when PCA is asked for more components than the data supports."""

    def __init__(self, message, usable_k):
        self.usable_k = usable_k
        super().__init__(f"{message} (usable k <= {usable_k})")


class UndefinedClassError(PrivSplitError, ValueError):
    pass


class DegenerateKernelError(PrivSplitError, ValueError):
    pass


class FormatError(PrivSplitError, ValueError):
    """Container file could not be decoded."""


class UnsupportedVersionError(FormatError):
    pass


class StageError(PrivSplitError, RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
