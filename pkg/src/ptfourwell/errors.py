"""Exception types raised across the simulator."""


class PTFourWellError(Exception):
    """Base class for all package errors."""


class CapacityError(PTFourWellError):
    """Requested Fock space exceeds the configured dimension cap."""


class ControlDivergedError(PTFourWellError):
    """A control parameter is not finite."""


class CollapseDetected(PTFourWellError):
    """Feedback controls diverged; the controlled run cannot continue.

    ``time`` is filled in by the integrator when known.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class PureStateDegeneracy(PTFourWellError):
    """The onsite-energy linear system is rank deficient (pure condensate)."""

    def __init__(self, message, time=None, det=None):
        super().__init__(message)
        self.time = time
        self.det = det


class EmptySubsetError(PTFourWellError):
    """Purity requested for a set of wells holding no particles."""


class BrokenPTRegimeError(PTFourWellError):
    """Gain/loss rate exceeds the tunnelling rate, no PT-symmetric eigenstate."""


class SeedNormError(PTFourWellError):
    """Mean-field coefficients do not sum to the particle number."""


class ConstraintSolveError(PTFourWellError):
    """Constraint projection did not reach tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class ConfigError(PTFourWellError):
    """Invalid run configuration. ``problems`` lists every violation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
