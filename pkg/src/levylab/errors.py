"""Exception types shared across the package."""


class LevyLabError(Exception):
    """Base class for all package errors."""


class ConfigError(LevyLabError):
    """Bad or unknown configuration input (maps to CLI exit status 2)."""


class NumericalError(LevyLabError):
    """Base for runtime numerical failures (maps to CLI exit status 3)."""


class BlowUpError(NumericalError):
    """A state trajectory left the finite range.

    Carries the location of the failure and, when available, the partial
    path simulated up to that point.
    """

    def __init__(self, t, x, partial_path=None):
        self.t = t
        self.x = x
        self.partial_path = partial_path
        super().__init__(f"state blow-up at t={t}: |x| non-finite or > 1e12")


class EventBudgetError(NumericalError):
    """Expected small-jump count per step exceeds the configured budget."""

    def __init__(self, expected, budget):
        self.expected = expected
        self.budget = budget
        super().__init__(
            f"expected {expected:.3g} small-jump events per step exceeds the "
            f"budget {budget}; increase the cutoff delta or reduce dt"
        )


class QuadratureError(NumericalError):
    """An integrand returned a non-finite value or a rule failed."""


class SingularDiffusionError(NumericalError):
    """sigma @ sigma^T was (numerically) singular along a path."""

    def __init__(self, t, cond=None):
        self.t = t
        self.cond = cond
        extra = f" (condition estimate {cond:.3g})" if cond is not None else ""
        super().__init__(f"diffusion matrix singular at t={t}{extra}")


class LawEstimationError(NumericalError):
    """Too many paths failed while estimating a transition law."""

    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)
