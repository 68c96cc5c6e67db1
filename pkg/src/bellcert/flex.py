"""Box self-testing via the flex measure.

For an expression with quantum bound B, consider every behavior whose
Bell value reaches at least (1-p)B at one hierarchy level.  Maximizing
each joint probability p(a,b|x,y) separately over that set and averaging
the per-cell maxima over the N*M settings gives the flex value.  A flex
of 1 certifies that the attaining box is unique (each per-setting
quadruple of maxima then sums to exactly what a single normalized
distribution can provide); any strictly larger value implies at least
two, and therefore a continuum of, attaining boxes.

Flex computed on a relaxation level upper-bounds the true flex, so the
level is mandatory metadata on every report.
"""
from __future__ import annotations

from dataclasses import dataclass

from .certify import moment_structure, tsirelson_bound
from .errors import InfeasibleError, SolverError
from .npa import bell_functional, probability_functional
from .scenario import OUTCOME_PAIRS, CoefficientMatrix
from .sdp import DEFAULT_GAP_TOL, SDPProblem, solve_tolerant

__all__ = ["FlexReport", "flex", "BOX_CERTIFIABLE_TOL"]

#: Tolerance on |flex - 1| below which the attaining box is declared unique.
BOX_CERTIFIABLE_TOL = 1e-3


@dataclass(frozen=True)
class FlexReport:
    """Flex value with its per-cell maxima and provenance."""

    flex: float
    per_cell_max: dict[tuple[int, int, int, int], float]  # (a, b, x, y) -> max
    noise: float
    level: str
    bound_used: float

    @property
    def box_certifiable(self) -> bool:
        return self.flex <= 1.0 + BOX_CERTIFIABLE_TOL

    def setting_quadruple(self, x: int, y: int) -> tuple[float, float, float, float]:
        """The four per-outcome maxima at one setting pair (--, -+, +-, ++)."""
        return tuple(self.per_cell_max[(a, b, x, y)] for (a, b) in OUTCOME_PAIRS)

    def as_dict(self) -> dict:
        return {
            "flex": self.flex,
            "noise": self.noise,
            "level": self.level,
            "bound_used": self.bound_used,
            "box_certifiable": self.box_certifiable,
            "per_cell_max": {
                f"{'-' if a < 0 else '+'}{'-' if b < 0 else '+'}|{x + 1},{y + 1}": v
                for (a, b, x, y), v in self.per_cell_max.items()
            },
        }


def flex(
    alpha: CoefficientMatrix,
    bound: float | None = None,
    p: float = 0.0,
    level: str = "1+AB",
    *,
    gap_tol: float = DEFAULT_GAP_TOL,
) -> FlexReport:
    """Average of per-cell probability maxima over boxes reaching (1-p)B.

    ``bound`` must come from the same level (default: recomputed here).
    The constraint direction is "at least", so at p = 0 it pins the
    optimum face of the relaxation.
    """
    if not (0.0 <= p < 1.0):
        raise ValueError(f"noise level must lie in [0, 1), got {p}")
    scenario = alpha.scenario
    structure = moment_structure(scenario, level)
    if bound is None:
        bound = tsirelson_bound(alpha, level, gap_tol=gap_tol)
    target = (1.0 - p) * bound
    constraint = (bell_functional(alpha, structure), ">=", target)

    per_cell: dict[tuple[int, int, int, int], float] = {}
    total = 0.0
    for x in range(scenario.n_alice):
        for y in range(scenario.n_bob):
            for (a, b) in OUTCOME_PAIRS:
                fn = probability_functional(a, b, x, y, structure)
                sol, _ = solve_tolerant(
                    SDPProblem(structure, fn, (constraint,)), "max", gap_tol=gap_tol
                )
                if sol.status == "infeasible":
                    raise InfeasibleError(
                        f"Bell value {target:.9g} unattainable at level {level} "
                        f"(bound from a tighter level?)"
                    )
                if sol.status != "optimal":
                    raise SolverError(
                        f"flex cell ({a},{b},{x},{y}) failed: status {sol.status}"
                    )
                v = min(max(float(sol.value), 0.0), 1.0)
                per_cell[(a, b, x, y)] = v
                total += v
    return FlexReport(
        flex=total / scenario.n_cells,
        per_cell_max=per_cell,
        noise=p,
        level=level,
        bound_used=target,
    )
