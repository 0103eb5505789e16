"""Exception hierarchy shared by every module of the package."""


class ToricBFieldError(Exception):
    """Base class for all errors raised by the package."""


class NotDelzant(ToricBFieldError):
    pass


class Unbounded(ToricBFieldError):
    pass


class EmptyInterior(ToricBFieldError):
    pass


class FanMismatch(ToricBFieldError):
    pass


class NoNefDecomposition(ToricBFieldError):
    pass


class ZeroAngleVector(ToricBFieldError):
    pass


class NotKahler(ToricBFieldError):
    pass


class UnsupportedPolytope(ToricBFieldError):
    """Raised by grid-based solvers on polytopes that are not axis-aligned boxes."""


class SingularHessian(ToricBFieldError):
    pass


class NonConvergence(ToricBFieldError):
    pass


class SlopeMismatch(ToricBFieldError):
    pass


class NotNormalized(ToricBFieldError):
    pass


class SingularGram(ToricBFieldError):
    pass


class FutakiNonzero(ToricBFieldError):
    def __init__(self, message: str, futaki=None):
        super().__init__(message)
        self.futaki = futaki


class LPUnbounded(ToricBFieldError):
    pass


class InvalidLambda(ToricBFieldError):
    pass


class DegenerateDenominator(ToricBFieldError):
    pass


class TanPole(ToricBFieldError):
    pass


class HypothesisViolated(ToricBFieldError):
    def __init__(self, message: str, hypothesis: str = ""):
        super().__init__(message)
        self.hypothesis = hypothesis


class SinZero(ToricBFieldError):
    pass


class NewtonDivergence(ToricBFieldError):
    def __init__(self, message: str, last_residual: float = float("nan")):
        super().__init__(message)
        self.last_residual = last_residual


class PoleParameter(ToricBFieldError):
    pass


class DegenerateSystem(ToricBFieldError):
    pass


class StabilityPrecondition(ToricBFieldError):
    pass


class StepCollapse(ToricBFieldError):
    def __init__(self, message: str, t_reached: float = 0.0, margin: float = float("nan")):
        super().__init__(message)
        self.t_reached = t_reached
        self.margin = margin


class SingularLinearization(ToricBFieldError):
    def __init__(self, message: str, smallest_singular_value: float = 0.0):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value
