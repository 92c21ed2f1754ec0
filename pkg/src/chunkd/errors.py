"""Exception hierarchy for the chunkd toolkit."""


class ChunkdError(Exception):
    """Base class for every error raised by this package."""


# --- backend registry / configuration ---------------------------------------

class MalformedConfig(ChunkdError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"config line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


class DuplicatePort(ChunkdError):
    pass


class UnknownBackend(ChunkdError):
    pass


class NotServerCapable(ChunkdError):
    """A server operation was attempted on a batch-only backend."""


# --- sessions ----------------------------------------------------------------

class SpawnFailure(ChunkdError):
    pass


class AddressInUse(ChunkdError):
    pass


class StartupTimeout(ChunkdError):
    pass


class EngineDied(ChunkdError):
    """The interpreter's output stream closed before the sentinel arrived."""


class ExecTimeout(ChunkdError):
    """The engine did not finish in time; its process has been killed."""


class SessionDead(ChunkdError):
    """The session's engine already exited; restart it before reuse."""


# --- wire protocol -----------------------------------------------------------

class MalformedHeader(ChunkdError):
    pass


class LengthMismatch(ChunkdError):
    pass


class UnknownVerb(ChunkdError):
    pass


class ConnectRefused(ChunkdError):
    pass


class ResponseTimeout(ChunkdError):
    pass


# --- batch execution ----------------------------------------------------------

class EmptyCommand(ChunkdError):
    pass


# --- chunk cache --------------------------------------------------------------

class UnsafeName(ChunkdError):
    pass


class MissingCache(ChunkdError):
    """A cached chunk output is required but was never produced."""


class FileExists(ChunkdError):
    """A file block targets an existing file and [overwrite] was not given."""


# --- directive parsing --------------------------------------------------------

class ParseError(ChunkdError):
    """Base for scanner errors; carries the 1-based source line."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class UnbalancedBraces(ParseError):
    pass


class UnknownOptional(ParseError):
    pass


class MalformedDirective(ParseError):
    pass


class QuoteNotAllowed(ChunkdError):
    """Inline code may not contain double quotes."""


class RangeOutOfBounds(ChunkdError):
    pass


# --- weaving ------------------------------------------------------------------

class InlineMultiline(ChunkdError):
    """Inline embedding refuses output that spans multiple lines."""


class WeaveError(ChunkdError):
    """A chunk failed and aborted the document pass."""

    def __init__(self, lineno: int, code: str, message: str, report=None):
        super().__init__(f"line {lineno}: [{code}] {message}")
        self.lineno = lineno
        self.code = code
        self.detail = message
        self.report = report
