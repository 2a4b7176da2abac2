"""Package-wide exception types."""


class DemiguiseError(Exception):
    """Base class for all toolkit errors."""


class TierViolationError(DemiguiseError):
    """A classifier capability was requested that its access tier forbids."""


class SchemaError(DemiguiseError):
    """A config or report file failed schema validation."""
