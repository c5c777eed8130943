"""Exception hierarchy shared by all modules."""


class TaskStackError(Exception):
    pass


class DimensionMismatch(TaskStackError, ValueError):
    pass


class NotPositiveDefinite(TaskStackError, ValueError):
    pass


class Infeasible(TaskStackError):
    pass


class IterationLimit(TaskStackError):
    pass


class TooManyConstraints(TaskStackError, ValueError):
    pass


class BehindCamera(TaskStackError):
    """The observed point has depth at or below the camera's ``z_min``."""


class CyclicOrder(TaskStackError, ValueError):
    pass


class IndexOutOfRange(TaskStackError, IndexError):
    pass


class ConfigError(TaskStackError, ValueError):
    pass


class ParseError(TaskStackError, ValueError):
    """Malformed scenario file; ``location`` is a line number or a field path."""

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(f"{location}: {message}" if location is not None else message)


class ValidationError(TaskStackError, ValueError):
    """Scenario violates one or more constraints; all of them are listed."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))
