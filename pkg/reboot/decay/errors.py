"""
Exceptions raised by `reboot.decay`.

Everything derives from `DecayError` so callers (and the CLI) can tell
our failures apart from bugs. Configuration problems additionally
derive from `ValueError`, runtime failures from `RuntimeError`.
"""


class DecayError(Exception):
    pass


class ConfigError(DecayError, ValueError):
    """Malformed or inconsistent configuration."""


class ServiceSpecError(ConfigError):
    """
    Malformed service distribution spec, e.g., `exp:` or `trunc(det:1`.

    The message includes the spec with a caret under the offending
    position.
    """

    def __init__(self, message: str, *, spec: str, position: int):
        self.spec = spec
        self.position = position
        self.reason = message
        super().__init__(
            f"{message} at position {position}\n"
            f"  {spec}\n"
            f"  {' ' * position}^"
        )


class UnstableModel(ConfigError):
    """The queue is not stable, i.e., rho >= 1."""


class PreconditionViolated(DecayError, ValueError):
    pass


class BracketingFailed(DecayError, RuntimeError):
    """An optimizer or root finder could not bracket its target."""


class InstabilityDetected(DecayError, RuntimeError):
    """A simulation exceeded its backlog guard."""


class RejectionTooRare(DecayError, RuntimeError):
    """Rejection sampling would accept with probability below 1e-6."""


class EstimationError(DecayError, ValueError):
    """The tail estimator cannot produce a fit from the samples."""
