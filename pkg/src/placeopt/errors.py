"""Exception types shared across the package."""


class PlaceoptError(Exception):
    """Base class for all errors raised by placeopt."""


class DomainError(PlaceoptError, ValueError):
    """An argument violates an operation's preconditions."""


class GenerationError(PlaceoptError, RuntimeError):
    """Random instance generation could not satisfy its constraints."""


class RolloutError(PlaceoptError, RuntimeError):
    """A policy produced an invalid action distribution during a rollout."""


class PolicyError(PlaceoptError, RuntimeError):
    """The policy network produced non-finite intermediates."""


class TrainingError(PlaceoptError, RuntimeError):
    """Training aborted (e.g. non-finite gradients)."""


class CheckpointError(PlaceoptError, ValueError):
    """A checkpoint file is malformed or inconsistent."""


class ParseError(PlaceoptError, ValueError):
    """A text input file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigKeyError(PlaceoptError, ValueError):
    """A config file contains an unknown or malformed key."""

    def __init__(self, key, message=None):
        self.key = key
        super().__init__(message or f"unknown config key: {key!r}")
