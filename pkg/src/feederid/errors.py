"""Exception types raised across the identification pipeline."""


class FeederIdError(Exception):
    """Base class for all package errors."""


class TopologyError(FeederIdError, ValueError):
    pass


class CycleDetected(TopologyError):
    pass


class DisconnectedNode(TopologyError):
    pass


class NonPositiveLength(TopologyError):
    pass


class DuplicateEdge(TopologyError):
    pass


class MissingRoot(TopologyError):
    pass


class DimensionMismatch(FeederIdError, ValueError):
    pass


class NonConvergence(FeederIdError, RuntimeError):
    """Backward/forward sweep did not converge (electrically infeasible loading)."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class SolverFailure(FeederIdError, RuntimeError):
    pass


class LpUnbounded(SolverFailure):
    pass


class Infeasible(FeederIdError):
    """The constraint system describes an empty set."""


class Unbounded(FeederIdError):
    pass


class InfeasibleFixedPoint(Infeasible):
    pass


class NumericalDegeneracy(FeederIdError):
    """Sampling space collapsed; usually a direction wrongly marked as free."""


class StartInfeasible(FeederIdError):
    pass


class DegenerateInput(FeederIdError, ValueError):
    pass


class ZeroTruthComponent(FeederIdError, ValueError):
    pass
