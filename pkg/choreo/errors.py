"""
Exception hierarchy for the choreo package.

Every failure the library raises on purpose derives from ``ChoreoError`` so
the CLI can map it to an exit code without swallowing programming errors.
"""


class ChoreoError(Exception):
    """Base class for all choreo errors."""


class ContractViolation(ChoreoError, ValueError):
    """A precondition of an operation does not hold (shape, range, phase)."""


class NumericFault(ChoreoError, ArithmeticError):
    """
    A non-finite value appeared in a forward or backward pass.

    Args:
        op:     Name of the operation that produced the value.
        detail: Free-form description (parameter name, tensor shape, ...).
    """

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        self.detail = detail
        msg = f"non-finite value in {op}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NotReadyError(ChoreoError):
    """Retryable: not enough data has been collected to satisfy the request."""


class DatasetParseError(ChoreoError):
    """An offline dataset record does not match the episode schema."""

    def __init__(self, record: int, field: str, reason: str):
        self.record = record
        self.field = field
        super().__init__(f"record {record}, field '{field}': {reason}")


class ConfigError(ChoreoError):
    """A configuration value is out of range or has the wrong type."""

    def __init__(self, field: str, reason: str):
        self.field = field
        super().__init__(f"config field '{field}': {reason}")


class CheckpointError(ChoreoError):
    """A checkpoint is unreadable or incompatible with the running configuration."""

    def __init__(self, field: str, reason: str):
        self.field = field
        super().__init__(f"checkpoint field '{field}': {reason}")


class RunLockedError(ChoreoError):
    """Another run already owns the output directory."""
