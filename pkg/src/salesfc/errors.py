"""Exception types shared across the pipeline."""


class SchemaError(ValueError):
    """Input table is missing a column or has the wrong layout."""


class ReferentialIntegrityError(ValueError):
    """A row references an id that is not defined in its parent table."""


class InsufficientDataError(ValueError):
    """Series or partition too short for the requested operation."""


class EmptyPartitionError(ValueError):
    """A split produced a partition with no rows."""


class StaleCacheError(RuntimeError):
    """An upstream cache changed since a downstream artifact was built."""


class NumericError(ArithmeticError):
    """Non-finite values or an invalid numeric domain."""
