"""Exception hierarchy shared across the engine.

Every domain-level failure derives from EngineError so the CLI can map
them to exit code 1, keeping exit code 2 for usage errors.
"""


class EngineError(Exception):
    """Base class for all engine-level errors."""


# --- code generation ---

class TransportError(EngineError):
    """Network or HTTP failure talking to the generation endpoint, after retries."""


class QuotaError(EngineError):
    """Rate limit (HTTP 429) still in force after the retry budget was spent."""


class EmptyCompletionError(EngineError):
    """The generation endpoint returned a blank completion."""


class UnknownCompletionError(EngineError):
    """A mock client has no scripted completion for the requested name/index."""


class NoCodeError(EngineError):
    """Model output contains no function definition."""


class NameMismatchError(EngineError):
    """Model output defines a function, but not the one that was requested."""


# --- execution ---

class BackendUnavailableError(EngineError):
    """The execution runner is missing, not executable, or cannot be spawned."""


class RunnerProtocolError(BackendUnavailableError):
    """The runner spawned but violated the stdin/stdout JSON protocol."""


class UnknownCodeError(EngineError):
    """A stub backend was asked about code it has no scripted result for."""


# --- grading ---

class AttemptLimitExceeded(EngineError):
    """More valid responses were supplied than the attempt limit allows."""


# --- psychometrics ---

class EmptyMaskError(EngineError):
    """A score matrix has no observed cells to fit or evaluate."""


class NonFiniteLossError(EngineError):
    """The optimizer produced a non-finite loss value."""


class LengthMismatchError(EngineError):
    """Two label sequences that must align have different lengths."""


class OutOfRangeError(EngineError):
    """A coefficient lies outside its documented range."""


# --- question bank / persistence ---

class ParseError(EngineError):
    """A persisted document does not match its schema."""


class DuplicateIdError(EngineError):
    """A question bank contains two questions with the same id."""
