"""Exception hierarchy shared by every module of the package."""


class ReplayArrayError(Exception):
    """Base class for all package errors."""


class ParameterError(ReplayArrayError, ValueError):
    """An argument is outside its valid domain."""


class InvalidMicrophoneError(ParameterError):
    pass


class ManifestParseError(ReplayArrayError, ValueError):
    """A manifest row does not follow the schema."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ConsistencyError(ReplayArrayError, ValueError):
    """Manifest contents contradict the device map."""


class ChannelMismatchError(ReplayArrayError, ValueError):
    pass


class RecordingIOError(ReplayArrayError, OSError):
    pass


class InsufficientDataError(ReplayArrayError, ValueError):
    """Not enough audio (or entries) to satisfy a request."""


class InsufficientAudioError(InsufficientDataError):
    pass


class DegenerateDataError(ReplayArrayError, ValueError):
    """Only one class present where both are required."""


class NoDataError(ReplayArrayError, ValueError):
    pass


class ShapeError(ReplayArrayError, ValueError):
    pass


class GeometryError(ShapeError):
    """Channel count of a model does not match the requested channels."""


class LeakageError(ReplayArrayError, ValueError):
    """Train and test channel sets partially overlap."""


class ConfigError(ParameterError):
    """A run configuration file is malformed or names unknown keys."""
