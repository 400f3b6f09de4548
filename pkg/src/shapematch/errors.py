"""Exception hierarchy shared by every module."""


class ShapeMatchError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class ParseError(ShapeMatchError, ValueError):
    pass


class TopologyError(ShapeMatchError, ValueError):
    pass


class DegenerateError(ShapeMatchError, ValueError):
    pass


class DimensionError(ShapeMatchError, ValueError):
    pass


class ConvergenceError(ShapeMatchError, RuntimeError):
    pass


class SingularError(ShapeMatchError, ArithmeticError):
    pass


class EmptyInputError(ShapeMatchError, ValueError):
    pass


class DisconnectedError(ShapeMatchError, RuntimeError):
    pass
