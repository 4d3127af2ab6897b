"""Exception hierarchy shared by all modules."""


class NodecError(Exception):
    pass


class DimensionError(NodecError, ValueError):
    pass


class SymmetryError(NodecError, ValueError):
    pass


class QuadratureError(NodecError, ArithmeticError):
    pass


class DivergenceError(NodecError, ArithmeticError):
    """Raised when a state or loss becomes non-finite.

    ``step`` is the index of the failing integration step (or epoch).
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class CalibrationError(NodecError, ValueError):
    pass


class UncontrollableError(NodecError, ArithmeticError):
    pass


class ParameterError(NodecError, ValueError):
    pass


class ConnectivityError(NodecError, ValueError):
    pass


class ConfigError(NodecError, ValueError):
    pass
