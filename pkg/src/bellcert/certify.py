"""Quantum bounds and noise-constrained probability boxes.

The Tsirelson bound B of an expression is the SDP maximum of its moment
functional over one hierarchy level.  A probability box then bounds each
joint outcome probability at the spot setting from below and above over
all moment assignments whose Bell value is pinned to (1-p)B, where p is
the white-noise level of the shared state: noise enters the optimization
only through that constraint value.

The bound B used inside the pinning constraint is always recomputed at
the same level as the box SDPs (or supplied by a caller who did exactly
that), so the equality is attainable by construction and cannot go
spuriously infeasible through cross-level mixing.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBoxError, InfeasibleError
from .npa import (
    MomentStructure,
    bell_functional,
    build_basis,
    build_moment_structure,
    probability_functional,
)
from .scenario import OUTCOME_PAIRS, CoefficientMatrix, Protocol, Scenario
from .sdp import DEFAULT_GAP_TOL, SDPProblem, solve_or_raise, solve_tolerant

__all__ = [
    "ProbabilityBox",
    "moment_structure",
    "tsirelson_bound",
    "probability_box",
]


@functools.lru_cache(maxsize=32)
def _structure_cached(n_alice: int, n_bob: int, level: str) -> MomentStructure:
    return build_moment_structure(build_basis(Scenario(n_alice, n_bob), level))


def moment_structure(scenario: Scenario, level: str) -> MomentStructure:
    """Shared, immutable moment structure for (scenario, level)."""
    return _structure_cached(scenario.n_alice, scenario.n_bob, level)


@dataclass(frozen=True)
class ProbabilityBox:
    """Per-outcome bounds at the spot setting under the Bell-value pin.

    ``lower``/``upper`` follow the fixed outcome-pair order
    (--, -+, +-, ++).  Any distribution compatible with the constraint
    lies componentwise inside the box and is normalized, hence
    sum(lower) <= 1 <= sum(upper).
    """

    lower: tuple[float, float, float, float]
    upper: tuple[float, float, float, float]
    spot: tuple[int, int]
    noise: float
    level: str
    bell_value_constraint: float
    gap_tol: float = DEFAULT_GAP_TOL

    def __post_init__(self):
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        if (lo < -1e-12).any() or (hi > 1.0 + 1e-12).any() or (lo > hi + 1e-9).any():
            raise EmptyBoxError(f"malformed box: lower={self.lower} upper={self.upper}")
        if lo.sum() > 1.0 + 1e-9 or hi.sum() < 1.0 - 1e-9:
            raise EmptyBoxError(
                f"box excludes every normalized distribution: "
                f"sum(l)={lo.sum():.6g} sum(u)={hi.sum():.6g}"
            )

    def lower_of(self, a: int, b: int) -> float:
        return self.lower[OUTCOME_PAIRS.index((a, b))]

    def upper_of(self, a: int, b: int) -> float:
        return self.upper[OUTCOME_PAIRS.index((a, b))]

    def as_dict(self) -> dict:
        keys = ["--", "-+", "+-", "++"]
        return {
            "lower": dict(zip(keys, self.lower)),
            "upper": dict(zip(keys, self.upper)),
            "constraint": self.bell_value_constraint,
        }


def tsirelson_bound(
    alpha: CoefficientMatrix,
    level: str = "1+AB",
    *,
    gap_tol: float = DEFAULT_GAP_TOL,
) -> float:
    """SDP upper bound on the quantum value of the expression.

    Nonincreasing in the level; never below the classical bound.
    """
    structure = moment_structure(alpha.scenario, level)
    problem = SDPProblem(structure, bell_functional(alpha, structure))
    return float(solve_or_raise(problem, "max", gap_tol=gap_tol).value)


def probability_box(
    protocol: Protocol,
    p: float,
    level: str = "1+AB",
    *,
    tsirelson: float | None = None,
    constraint_mode: str = "equality",
    gap_tol: float = DEFAULT_GAP_TOL,
) -> ProbabilityBox:
    """Bound the four spot-setting probabilities under the Bell-value pin.

    ``tsirelson`` may carry a bound precomputed *at this same level*;
    by default it is recomputed here.  ``constraint_mode`` is "equality"
    (the certification definition) or "at-least" (a sensitivity variant
    constraining the Bell value from below instead of pinning it).
    """
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"noise level must lie in [0, 1], got {p}")
    if constraint_mode not in ("equality", "at-least"):
        raise ValueError(f"unknown constraint mode {constraint_mode!r}")
    alpha = protocol.alpha
    structure = moment_structure(alpha.scenario, level)
    bound = tsirelson_bound(alpha, level, gap_tol=gap_tol) if tsirelson is None else tsirelson
    target = (1.0 - p) * bound
    relation = "=" if constraint_mode == "equality" else ">="
    constraint = (bell_functional(alpha, structure), relation, target)

    lower = []
    upper = []
    loosest = gap_tol
    for (a, b) in OUTCOME_PAIRS:
        fn = probability_functional(a, b, protocol.spot_x, protocol.spot_y, structure)
        problem = SDPProblem(structure, fn, (constraint,))
        sol_hi, tol_hi = solve_tolerant(problem, "max", gap_tol=gap_tol)
        sol_lo, tol_lo = solve_tolerant(problem, "min", gap_tol=gap_tol)
        loosest = max(loosest, tol_hi, tol_lo)
        for sol in (sol_hi, sol_lo):
            if sol.status == "infeasible":
                raise InfeasibleError(
                    f"Bell value {target:.9g} unattainable at level {level}; "
                    "the bound was computed at a tighter level than the box"
                )
            if sol.status != "optimal":
                from .errors import SolverError

                raise SolverError(
                    f"box SDP failed for outcome ({a},{b}): status {sol.status}"
                )
        # Relaxations below 1+AB do not enforce outcome positivity, and
        # converged values carry solver dust; intersect with [0, 1].
        lower.append(min(max(float(sol_lo.value), 0.0), 1.0))
        upper.append(min(max(float(sol_hi.value), 0.0), 1.0))
    lower = [min(l, u) for l, u in zip(lower, upper)]
    return ProbabilityBox(
        tuple(lower), tuple(upper), protocol.spot, p, level, target, loosest
    )
