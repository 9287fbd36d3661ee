"""Exception hierarchy shared across the harness."""


class PowerBenchError(Exception):
    """Base class for all harness errors."""


class ConfigError(PowerBenchError):
    """Invalid or missing configuration (file, schema, or field values)."""


class BackendUnavailable(PowerBenchError):
    """The device backend cannot be reached (tool missing, device gone)."""


class CapRangeError(PowerBenchError):
    """Requested power cap lies outside the device's allowed range."""


class BackendRejection(PowerBenchError):
    """The backend refused an operation (e.g. the vendor tool denied it)."""


class ReadFailure(PowerBenchError):
    """A single telemetry read failed; the sample slot is invalid."""


class InsufficientData(PowerBenchError):
    """Not enough valid samples or windows to compute the requested value."""


class ProtocolError(PowerBenchError):
    """Workload event stream violates the event protocol."""


class EventParseError(ProtocolError):
    """A single protocol line could not be parsed.

    Carries ``offset``, the byte offset of the first offending character
    within the line when it is known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class PlanError(PowerBenchError):
    """A sweep plan cannot be constructed (e.g. no caps fit the device)."""


class PersistError(PowerBenchError):
    """Run artifacts could not be written or are incomplete on disk."""


class AnalysisError(PowerBenchError):
    """Metrics or curve construction failed (bad inputs, duplicate caps)."""


class TooFewPoints(AnalysisError):
    """Curve has too few points for the requested analysis."""
