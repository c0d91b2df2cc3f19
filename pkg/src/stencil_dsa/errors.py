"""Exception hierarchy shared by every stage of the toolkit."""


class StencilError(Exception):
    """Base class for user-facing errors (bad input, infeasible request)."""


class PositionedError(StencilError):
    """An error that can point at a line/column of the DSL source."""

    def __init__(self, message, line=None, col=None):
        self.message = message
        self.line = line
        self.col = col
        if line is not None:
            message = f"{line}:{col}: {message}"
        super().__init__(message)


class InternalError(Exception):
    """An invariant of the toolkit itself was violated (a bug, not bad input)."""
