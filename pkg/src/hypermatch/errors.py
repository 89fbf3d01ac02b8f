"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: validation/format/truncation/dimension
problems are data errors (exit 3), degenerate metric inputs are metric
errors (exit 4), argument problems are usage errors (exit 2).
"""


class ValidationError(ValueError):
    """In-memory data violates a documented invariant."""


class DimensionError(ValidationError):
    """Shapes, grids, or layer sets disagree between components."""


class FormatError(ValueError):
    """A file is not a recognizable feature or bank file."""


class TruncationError(FormatError):
    """A file ends before its declared payload."""


class MetricUndefinedError(ValueError):
    """A ranking metric was requested on degenerate labels."""
