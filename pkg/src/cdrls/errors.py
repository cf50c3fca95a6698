"""Exception hierarchy shared by the library and the CLI."""


class CdrlsError(Exception):
    """Base class for all package errors."""


class ValidationError(CdrlsError, ValueError):
    """Bad input: malformed graph, config field, or dataset."""


class ConfigError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class UsageError(CdrlsError, RuntimeError):
    """API called out of protocol (e.g. slots requested out of order)."""


class NumericError(CdrlsError, ArithmeticError):
    """Non-finite value produced by an update kernel."""

    def __init__(self, message, node=None, slot=None):
        self.node = node
        self.slot = slot
        where = []
        if node is not None:
            where.append(f"node {node}")
        if slot is not None:
            where.append(f"slot {slot}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SourceExhausted(CdrlsError):
    """A finite data source ran out of records."""


class DeviationError(CdrlsError):
    """Two formulations that must agree drifted apart."""

    def __init__(self, message, slot=None, deviation=None):
        self.slot = slot
        self.deviation = deviation
        super().__init__(message)
