class MulchError(Exception):
    """Base class for errors raised by the mulch package."""


class EventParseError(MulchError, ValueError):
    def __init__(self, message: str, line: int = None, path: str = None):
        self.line = line
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}"
        if line is not None:
            location += f" line {line}"
        super(EventParseError, self).__init__(
            f"{location.strip()}: {message}" if location else message
        )


class NonStationaryError(MulchError, ValueError):
    def __init__(self, radius: float, block_pair=None):
        self.radius = radius
        self.block_pair = block_pair
        where = f" for block pair couple {block_pair}" if block_pair is not None else ""
        super(NonStationaryError, self).__init__(
            f"Non-stationary parameters{where}: spectral radius {radius:.6g} >= 1"
        )


class LikelihoodError(MulchError, ArithmeticError):
    def __init__(self, event_index: int, value: float):
        self.event_index = event_index
        self.value = value
        super(LikelihoodError, self).__init__(
            f"Nonpositive intensity {value!r} at event {event_index}"
        )
