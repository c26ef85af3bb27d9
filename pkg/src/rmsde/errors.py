"""Exception types raised by the simulation engines."""


class InputDomainError(ValueError):
    """A parameter or state lies outside the model's domain."""


class DegenerateCovarianceError(ValueError):
    """The covariance is singular where a strictly positive factor is needed."""


class StiffnessError(RuntimeError):
    """The adaptive ODE step size collapsed below its floor."""


class DivergenceError(RuntimeError):
    """The ODE integrator produced a non-finite state."""


class BudgetExceededError(RuntimeError):
    """The jump budget of an exact simulation was exhausted.

    The partial path simulated so far is kept on ``partial_path``.
    """

    def __init__(self, message, partial_path=None):
        super().__init__(message)
        self.partial_path = partial_path


class BlowupError(RuntimeError):
    """An Euler-Maruyama path produced a non-finite state."""

    def __init__(self, message, partial_path=None, path_index=None):
        super().__init__(message)
        self.partial_path = partial_path
        self.path_index = path_index


class EnsembleError(RuntimeError):
    """A path inside a Monte Carlo ensemble failed."""

    def __init__(self, message, path_index, seed):
        super().__init__(message)
        self.path_index = path_index
        self.seed = seed
