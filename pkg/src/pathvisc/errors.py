"""Exception types raised across the package."""


class PathError(ValueError):
    """Invalid rough path data (bad times, nonzero start, defect too large)."""


class HamiltonianError(ValueError):
    """Invalid Hamiltonian or drift specification."""


class FlowDivergence(RuntimeError):
    """Characteristics left the trusted range (|x| or |p| above the guard)."""


class HorizonExceeded(RuntimeError):
    """The forward characteristic map is no longer safely invertible."""

    def __init__(self, message, min_det=None, time=None):
        super().__init__(message)
        self.min_det = min_det
        self.time = time


class InversionError(RuntimeError):
    """Newton inversion of the characteristic map failed at some node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class StepRestrictionError(ValueError):
    """The requested time step violates the monotonicity restriction."""

    def __init__(self, message, required_dt=None):
        super().__init__(message)
        self.required_dt = required_dt


class NumericalAbort(RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MeshMismatch(ValueError):
    """Fields do not share a grid and time mesh."""


class PreconditionError(ValueError):
    """A construction was asked to run outside its hypotheses."""


class ConfigError(ValueError):
    """Malformed run configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
