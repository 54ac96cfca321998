"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates a documented precondition."""


class UnsupportedOperation(NotImplementedError):
    """The requested operation is not defined for this input kind."""


class ConfigError(ValueError):
    """A configuration document failed to parse or validate.

    ``key`` names the offending field (dotted path) when known.
    """

    def __init__(self, message, key=None, line=None):
        self.message = message
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
