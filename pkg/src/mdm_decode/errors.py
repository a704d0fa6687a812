"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class PositionAlreadyUnmasked(EngineError):
    """An operation targeted a generation position that already holds a token."""


class TokenIsMask(EngineError):
    """A concrete token slot was about to receive the mask id."""


class InvalidDistribution(EngineError):
    """A token distribution violates its mass constraints."""


class EmptyDistribution(EngineError):
    """A scorer received a distribution with no token entries."""


class EnumerationBoundExceeded(EngineError):
    """Exact conditional enumeration would exceed the configured state cap."""


class TokenOutOfRange(EngineError):
    """A token id fell outside the vocabulary."""


class FormatError(EngineError):
    """A persisted payload is malformed or corrupt."""


class EmptyScores(EngineError):
    """A selection policy received no candidate positions."""


class EmptyInput(EngineError):
    """A set-selection policy received no candidate statistics."""


class MaxStepsExceeded(EngineError):
    """The decode loop passed its safety bound without completing."""


class ShapeMismatch(EngineError):
    """Trajectory matrices with different shapes cannot be aggregated."""


class ProtocolError(EngineError):
    """A remote frame was syntactically or semantically malformed."""


class RemoteFailure(EngineError):
    """The remote server answered with an error frame."""


class RemoteTimeout(EngineError, TimeoutError):
    """The remote server did not answer in time."""


class DecodeAborted(EngineError):
    """A denoiser failed mid-decode; carries whatever was decoded so far."""

    def __init__(self, message, state, events):
        super().__init__(message)
        self.state = state
        self.events = list(events)
