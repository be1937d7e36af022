"""Exception hierarchy shared by every layer of the engine."""


class AtomMemError(Exception):
    """Base class for all engine errors."""


class InvalidArgument(AtomMemError, ValueError):
    pass


class ConflictError(AtomMemError):
    pass


class NotFoundError(AtomMemError, LookupError):
    pass


class ProviderError(AtomMemError):
    """A chat or embedding backend failed (transport, timeout, missing reply)."""


class ExtractionFailed(AtomMemError):
    """The extractor returned output that could not be turned into memory units."""


class InvalidInput(AtomMemError, ValueError):
    """A transcript or QA file could not be parsed.

    ``line`` carries the 1-based line number of the offending record when known.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip() if where else message)


class StoreLocked(AtomMemError):
    pass
