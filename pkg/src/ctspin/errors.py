"""Exception hierarchy."""


class CTSpinError(Exception):
    """Base class for all package errors."""


class EmptyLatticeError(CTSpinError, ValueError):
    """No lattice site satisfies the requested geometry."""


class SamplingError(CTSpinError, ValueError):
    """A configuration cannot be sampled from the given lattice."""


class CoincidentSpinsError(CTSpinError, ValueError):
    """Two spins occupy the same position; the dipolar coupling is singular."""


class DimensionError(CTSpinError, ValueError):
    """Operator or state dimensions do not match, or exceed the dense limit."""


class NoDecayError(CTSpinError, ValueError):
    """The coherence never decays enough for a stretched-exponential fit.

    Attributes:
        t2_lower_bound: smallest T2 (us) compatible with the data for any
            allowed stretch exponent.
    """

    def __init__(self, message, t2_lower_bound):
        super().__init__(message)
        self.t2_lower_bound = t2_lower_bound


class FlatSignalError(CTSpinError, ValueError):
    """No oscillation is present above the noise floor."""


class AcceptanceUnreachableError(CTSpinError, RuntimeError):
    """CCE discards made the target number of valid configurations unreachable."""

    def __init__(self, message, accepted, attempted):
        super().__init__(message)
        self.accepted = accepted
        self.attempted = attempted
