"""Exception types shared across the engine.

Every failure the engine can report maps onto one of these classes, so
callers (and the CLI exit-code mapping) can dispatch on type alone.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EngineError):
    """Invalid configuration value; the message names the offending key."""


class UnsupportedModeError(ConfigError):
    """A requested operation is not available for the configured mode."""


class DimensionError(EngineError):
    """Tensor or vector shapes do not match the operation's contract."""


class TimestepOutOfRangeError(EngineError, IndexError):
    """Timestep index outside [1, T]."""


class DegenerateTimestepError(EngineError):
    """The noise scale g(t) is zero, making the eps/score map singular."""


class NumericError(EngineError):
    """Non-finite values where finite ones are required."""


class NonFiniteGradientError(NumericError):
    """A parameter gradient contains NaN or infinity; the run must abort."""


class IntegrityError(EngineError):
    """A persisted artifact (checkpoint, report) fails its integrity check."""


class BackendError(EngineError):
    """Base class for score-backend failures (CLI exit code 4)."""


class TransportError(BackendError):
    """Connection-level failure: closed socket, framing or protocol violation."""


class IdMismatchError(BackendError):
    """Response id does not match the outstanding request id."""


class ShapeMismatchError(BackendError):
    """Tensor shape disagrees with the negotiated or requested shape."""


class BackendFrameError(BackendError):
    """The backend answered with an explicit error frame."""


class PayloadDecodeError(BackendError):
    """Binary payload could not be decoded (bad base64, wrong length, non-finite)."""
