"""Exception types shared across the simulator modules."""


class InvalidArgument(ValueError):
    pass


class TruncationError(ValueError):
    """A quantity needs more of the infinite tree than the truncation keeps."""


class OutOfOrderEvent(ValueError):
    pass


class CapExceeded(RuntimeError):
    """An ancestry trace left the range of simulated lookdown levels."""


class WindowTooSmall(RuntimeError):
    pass


class TooFewSamples(ValueError):
    pass


class LogParseError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
