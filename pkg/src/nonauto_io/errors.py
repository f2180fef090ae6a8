"""Exception hierarchy shared by all modules."""


class NonautoIoError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(NonautoIoError, ValueError):
    pass


class OutOfRangeError(NonautoIoError, ValueError):
    pass


class InvalidFunctionError(NonautoIoError, ValueError):
    pass


class InconsistentEnvelopeError(NonautoIoError, ValueError):
    pass


class InvalidIntervalError(NonautoIoError, ValueError):
    pass


class InvalidStateError(NonautoIoError, ValueError):
    pass


class NoContractionError(NonautoIoError, RuntimeError):
    pass


class InvalidSpecError(NonautoIoError, ValueError):
    pass


class CompatibilityError(NonautoIoError, ValueError):
    pass


class UnsupportedOrderError(NonautoIoError, ValueError):
    pass


class InvalidBoundaryError(NonautoIoError, ValueError):
    pass


class NoRightInverseError(NonautoIoError, ValueError):
    pass


class InvalidInterconnectionError(NonautoIoError, ValueError):
    pass


class InvalidProfileError(NonautoIoError, ValueError):
    pass


class IncompleteEnvelopeError(NonautoIoError, ValueError):
    pass


class IncompleteTrajectoryError(NonautoIoError, ValueError):
    pass


class BlowUpInLimitError(NonautoIoError, RuntimeError):
    pass


class ConfigError(NonautoIoError, ValueError):
    """Scenario configuration problem; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
