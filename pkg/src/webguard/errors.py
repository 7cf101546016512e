"""Exception hierarchy shared across the engine."""


class WebGuardError(Exception):
    """Base class for all engine errors."""


class UnknownEventNameError(WebGuardError, KeyError):
    """Event name not present in the catalog."""


class MalformedRecordError(WebGuardError, ValueError):
    """A trace-file line failed to parse; carries the 1-based line number."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class EmptyInputError(WebGuardError, ValueError):
    """Input carried no records at all."""


class InsufficientDataError(WebGuardError, ValueError):
    """Not enough pooled samples to fit the requested quantizer."""


class SymbolOutOfRangeError(WebGuardError, ValueError):
    """Observation symbol outside the model alphabet."""


class AlphabetMismatchError(WebGuardError, ValueError):
    """Two models do not share an emission alphabet."""


class EnumerationCapExceededError(WebGuardError, ValueError):
    """Exact t-letter enumeration would exceed the configured cap."""


class DuplicateSequenceError(WebGuardError, ValueError):
    """A wire batch re-used an already-seen (session, seq) pair."""


class InsufficientTrialsError(WebGuardError, RuntimeError):
    """No type-II events observed at the largest sequence length."""
