"""Exception hierarchy shared by every qcsim module."""


class QcsimError(Exception):
    """Base class for all qcsim failures."""


class ConfigurationError(QcsimError, ValueError):
    """Invalid layout, budget, ladder or run configuration."""


class ContractViolation(QcsimError, RuntimeError):
    """A caller broke a documented precondition (a programming error)."""


class UnsupportedModeError(QcsimError, ValueError):
    """Error-bound mode not available on this path."""


class CorruptionError(QcsimError):
    """Checksum mismatch or undecodable payload."""


class FormatError(QcsimError):
    """Unknown magic, codec id or bound mode in serialized data."""


class ResourceExhausted(QcsimError):
    """Compressed state does not fit the budget even at the loosest level."""

    def __init__(self, message: str, gate_index: int | None = None):
        super().__init__(message)
        self.gate_index = gate_index


class ExchangeError(QcsimError):
    """Block exchange between ranks failed; the exchange may be retried."""

    retryable = True


class CircuitParseError(QcsimError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CheckpointError(QcsimError):
    """Checkpoint could not be written or read."""


class VersionMismatchError(CheckpointError):
    pass


class LayoutMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CheckpointCorruptionError(CheckpointError, CorruptionError):
    def __init__(self, message: str, rank: int, block: int):
        super().__init__(message)
        self.rank = rank
        self.block = block
