"""Exception hierarchy shared by all modules."""


class VaridynError(Exception):
    """Base class for every error raised by the package."""


class ExpressionSyntaxError(VaridynError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownSymbolError(VaridynError):
    pass


class DimensionError(VaridynError):
    pass


class FieldDomainError(VaridynError, ArithmeticError):
    """Evaluation left the domain of an elementary function or a declared box."""


class SignatureError(VaridynError):
    pass


class LagrangianError(VaridynError):
    """A declared structural flag (cyclicity, homogeneity, ...) failed a spot check."""


class DegenerateInputError(VaridynError):
    """Zero velocity or a null-cone direction where a reduction is undefined."""


class NoBracketError(VaridynError):
    pass


class ConvergenceError(VaridynError):
    pass


class QuadratureError(VaridynError):
    pass


class PreconditionError(VaridynError):
    pass


class ForbiddenRegionError(PreconditionError, FieldDomainError):
    pass


class SingularMassMatrixError(VaridynError):
    pass


class StepUnderflowError(VaridynError):
    pass


class UndersampledOrbitError(VaridynError):
    pass


class ScenarioError(VaridynError):
    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer


class EdgeError(VaridynError):
    """Wraps a failure inside one mapping of a diagram loop."""

    def __init__(self, edge, cause):
        super().__init__(f"[{edge}] {type(cause).__name__}: {cause}")
        self.edge = edge
        self.cause = cause
