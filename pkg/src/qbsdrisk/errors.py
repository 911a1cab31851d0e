"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class EstimationError(RuntimeError):
    """Every optimizer start failed to produce a finite objective.

    ``diagnostics`` carries whatever the best attempt produced so callers
    can log it or fall back.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SimulationError(RuntimeError):
    """The simulated recursion overflowed."""


class InputError(ValueError):
    """Malformed user input (price files, config files, forecast tables)."""
