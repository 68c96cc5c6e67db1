"""Exception hierarchy shared across the package."""


class BellcertError(Exception):
    """Base class for all package errors."""


class ScenarioMismatchError(BellcertError):
    """Two objects built for different measurement scenarios were combined."""


class InfeasibleError(BellcertError):
    """The constraint set of an optimization problem is empty."""


class UnboundedError(BellcertError):
    """The objective is unbounded on the feasible set (malformed relaxation)."""


class SolverError(BellcertError):
    """The SDP solver failed numerically; retrying at looser tolerance may help."""


class EmptyBoxError(BellcertError):
    """A probability box admits no normalized distribution (upstream bug)."""


class AnsatzError(BellcertError):
    """No permutation of the closed-form ansatz lies inside the box."""


class CheckpointMismatchError(BellcertError):
    """Resume refused: the on-disk manifest was written under a different config."""
