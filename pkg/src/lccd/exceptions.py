"""Exception hierarchy shared by every module of the package."""


class LccdError(Exception):
    """Base class for all errors raised by lccd."""


class DimensionError(LccdError, ValueError):
    pass


class FeasibilityError(LccdError, ValueError):
    """A point or direction violates ``Ax = 0`` (or a box) beyond tolerance."""


class TopologyError(LccdError, ValueError):
    pass


class ConfigError(LccdError, ValueError):
    pass


class NumericsError(LccdError, ArithmeticError):
    """NaN objective, drifting incremental caches, or similar numeric failure."""


class UnboundedError(NumericsError):
    pass


class ReductionError(LccdError, ValueError):
    pass


class InternalError(LccdError, RuntimeError):
    pass


class EngineError(LccdError, RuntimeError):
    """A worker of the asynchronous engine failed."""


class MaxWallTimeError(EngineError):
    pass


class ParseError(LccdError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
