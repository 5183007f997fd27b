"""Exception types raised by the simulation stack."""


class FormationError(Exception):
    """Base class for every error raised by angleform.

    ``time`` is filled in by the run loop when the error aborts a simulation.
    """

    time: float | None = None

    def at(self, t: float) -> "FormationError":
        self.time = t
        return self

    def __str__(self) -> str:
        msg = super().__str__()
        if self.time is not None:
            return f"t={self.time:.6g}: {msg}"
        return msg


class CoincidentAgents(FormationError):
    """Two agents sharing an edge are closer than the coincidence threshold."""


class EstimatorSingular(FormationError):
    """A distance estimate fell to or below its positivity floor."""


class NonFiniteState(FormationError):
    """The integrated state contains NaN or inf."""


class InvalidAttachment(FormationError):
    """A Laman attachment references missing or non-adjacent anchors."""


class ConfigError(FormationError):
    """Malformed or inconsistent scenario configuration."""
