from __future__ import annotations


class MftWbcError(Exception):
    """Base class for all errors raised by this package."""


class NoClosure(MftWbcError):
    """The two distal links of a leg cannot meet for the given hip angles."""


class OutOfReach(MftWbcError):
    """A foot target lies outside the reachable space of the leg."""


class RankDeficient(MftWbcError):
    """The loop-closure Jacobian lost rank (closure singularity)."""


class ActuationSingular(MftWbcError):
    """``S_a N_h^T S_a^T`` is too badly conditioned to recover actuator torques."""


class SingularLimb(MftWbcError):
    """A limb's distal link line is undefined."""


class ZeroVector(MftWbcError, ValueError):
    pass


class InfeasibleFit(MftWbcError):
    """The polygon fit cannot satisfy both approximation conditions."""


class SchemaMismatch(MftWbcError, ValueError):
    pass


class ModelHashMismatch(MftWbcError, ValueError):
    pass


class InconsistentPhase(MftWbcError):
    """A task references a foot whose phase contradicts the contact set."""


class NumericalBlowup(MftWbcError):
    """Simulation state left the sanity envelope."""


class EmptyPreferable(UserWarning):
    """No grid cell satisfies the index bounds."""
