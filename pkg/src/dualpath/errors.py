"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data/parse problems exit 2, numeric
failures exit 3.
"""


class DualPathError(Exception):
    """Base class for all package errors."""


class ContractError(DualPathError, ValueError):
    """A caller violated a documented precondition (shapes, ranges, stale caches)."""


class UnsupportedStructureError(ContractError):
    """A network does not have the layer structure an operation requires."""


class NumericFailure(DualPathError, ArithmeticError):
    """A non-finite value appeared in a computation.

    Attributes
    ----------
    iterate : ndarray or None
        The last point at which the failure was observed (optimizer iterate
        or flattened parameters).
    minibatch : int or None
        Index of the minibatch being processed, when raised during training.
    last_good : object or None
        Last parameters known to be finite, when a caller can provide them.
    """

    def __init__(self, message, iterate=None, minibatch=None, last_good=None):
        super().__init__(message)
        self.iterate = iterate
        self.minibatch = minibatch
        self.last_good = last_good


class ParseError(DualPathError, ValueError):
    """Malformed file content. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FormatError(ParseError):
    """Wrong magic number or unsupported format version."""


class TruncationError(ParseError):
    """A file ended before its declared payload."""

    def __init__(self, message, expected, actual):
        super().__init__(f"{message}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class CoverageError(DualPathError, ValueError):
    """Aggregation left pixels without any contributing patch."""

    def __init__(self, pixels):
        self.pixels = pixels
        shown = ", ".join(f"({r}, {c})" for r, c in pixels[:10])
        more = "" if len(pixels) <= 10 else f" and {len(pixels) - 10} more"
        super().__init__(f"{len(pixels)} pixels not covered by any patch: {shown}{more}")


class ConfigError(DualPathError, ValueError):
    """Inconsistent experiment or CLI configuration."""
