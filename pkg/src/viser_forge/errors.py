"""Exception hierarchy shared across the toolkit."""


class ForgeError(Exception):
    """Base class for all toolkit errors."""


class MeshFormatError(ForgeError):
    """Raised when a mesh file cannot be parsed or violates mesh invariants."""


class OracleSchemaError(ForgeError):
    """Raised when an oracle response violates its wire schema.

    ``field_path`` points at the offending field, e.g.
    ``views[0].parts[1].bbox[0][2]``.
    """

    def __init__(self, message: str, field_path: str = ""):
        self.field_path = field_path
        if field_path:
            message = f"{message} (at {field_path})"
        super().__init__(message)


class OracleTransportError(ForgeError):
    """Raised when the remote oracle is unreachable after retries."""


class UvOverlapError(ForgeError):
    """Raised when UV islands overlap beyond the area tolerance."""


class InfeasibleLayoutError(ForgeError):
    """Raised when the layout solver exhausts its attempt budget.

    Carries the most-violated constraint of the best attempt seen.
    """

    def __init__(self, message: str, worst_violation=None):
        self.worst_violation = worst_violation
        super().__init__(message)


class ConfigError(ForgeError):
    """Raised for invalid pipeline configuration (CLI exit code 2)."""
