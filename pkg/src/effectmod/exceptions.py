"""Exception types shared across the toolkit."""


class InputError(ValueError):
    """Malformed or inconsistent input data.

    ``line`` is the 1-based line number in the source file when known.
    """

    def __init__(self, message, *, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericError(ArithmeticError):
    """A numerical routine produced an unusable value."""
