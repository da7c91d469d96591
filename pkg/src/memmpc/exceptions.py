class ConfigError(ValueError):
    """Invalid scenario, model, or optimizer configuration."""


class DegenerateGeometry(ArithmeticError):
    """A simplex or hyperplane computation hit a (near) singular matrix."""


class WalkAborted(RuntimeError):
    """Point location in the hull triangulation could not be completed."""


class StaleLocation(ValueError):
    """A facet index passed to a hull update does not locate the new point."""


class NonFiniteGradient(ArithmeticError):
    """The cost gradient is not finite at the requested linearization point."""


class ControllerFault(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
