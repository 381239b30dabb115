"""Exception hierarchy. The CLI maps each class to an exit code."""


class SimulationError(Exception):
    exit_code = 1


class ConfigError(SimulationError, ValueError):
    """Bad parameter, unknown key, or invalid geometry request."""

    exit_code = 2


class SolverError(SimulationError, RuntimeError):
    exit_code = 3

    def __init__(self, message, iterations=None, step=None):
        super().__init__(message)
        self.iterations = iterations
        self.step = step


class InvariantViolation(SimulationError, RuntimeError):
    """A discrete invariant (unit length, tangency, finiteness) broke."""

    exit_code = 4

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
