"""Solver contract tests: known optima, duality, determinism, statuses,
and the round-trippable problem dump."""
import numpy as np
import pytest

from bellcert.errors import InfeasibleError
from bellcert.npa import (
    LinearFunctional,
    MomentStructure,
    MonomialBasis,
    bell_functional,
    build_basis,
    build_moment_structure,
)
from bellcert.scenario import CoefficientMatrix, Scenario
from bellcert.sdp import (
    SDPProblem,
    dump_problem,
    load_problem,
    solve,
    solve_or_raise,
)


def ad_hoc_structure(dimension, cells, pinned, words=None):
    """Bare structure for synthetic solver tests (no scenario semantics)."""
    words = words or [((k,), ()) for k in range(len(cells))]
    basis = MonomialBasis(Scenario(1, 1), "1", tuple([((), ())] * dimension))
    return MomentStructure(
        basis,
        tuple(words),
        {w: k for k, w in enumerate(words)},
        tuple(tuple(c) for c in cells),
        tuple(pinned),
    )


@pytest.fixture(scope="module")
def chsh_problem():
    chsh = CoefficientMatrix.from_string("1,1;1,-1")
    st = build_moment_structure(build_basis(Scenario(2, 2), "1"))
    return SDPProblem(st, bell_functional(chsh, st))


class TestKnownOptima:
    def test_constant_objective(self):
        st = ad_hoc_structure(1, [], [(0, 0)], words=[])
        sol = solve(SDPProblem(st, LinearFunctional({}, 0.5)))
        assert sol.status == "optimal"
        assert sol.value == pytest.approx(0.5, abs=1e-9)

    def test_two_by_two_off_diagonal(self):
        # pinned unit diagonal: PSD forces |off-diagonal| <= 1
        st = ad_hoc_structure(2, [[(0, 1)]], [(0, 0), (1, 1)])
        sol = solve(SDPProblem(st, LinearFunctional({0: 1.0})))
        assert sol.status == "optimal"
        assert sol.value == pytest.approx(1.0, abs=1e-7)
        sol_min = solve(SDPProblem(st, LinearFunctional({0: 1.0})), "min")
        assert sol_min.value == pytest.approx(-1.0, abs=1e-7)

    def test_chsh_level1(self, chsh_problem):
        sol = solve(chsh_problem)
        assert sol.status == "optimal"
        assert sol.value == pytest.approx(2 * np.sqrt(2), abs=1e-6)

    def test_direction_validation(self, chsh_problem):
        with pytest.raises(ValueError):
            solve(chsh_problem, "maximize")

    def test_dimension_cap(self, chsh_problem):
        with pytest.raises(ValueError):
            solve(chsh_problem, max_dimension=3)


class TestDualityAndScaling:
    def test_weak_duality_against_oracle_point(self, chsh_oracle):
        # the solver's max never falls below the value of a feasible point
        st = build_moment_structure(build_basis(Scenario(2, 2), "1+AB"))
        chsh = CoefficientMatrix.from_string("1,1;1,-1")
        fn = bell_functional(chsh, st)
        y = chsh_oracle.moment_assignment(st)
        assert np.linalg.eigvalsh(st.matrix(y)).min() > -1e-9
        sol = solve(SDPProblem(st, fn))
        assert sol.value >= fn.evaluate(y) - 1e-7

    def test_max_at_least_min(self, chsh_problem):
        hi = solve(chsh_problem, "max").value
        lo = solve(chsh_problem, "min").value
        assert hi >= lo

    def test_objective_scaling_and_offset(self, chsh_problem):
        # the 1e-9 relative contract needs a tighter-than-default gap target
        base = solve(chsh_problem, gap_tol=1e-11).value
        st = chsh_problem.structure
        fn = chsh_problem.objective
        scaled = solve(SDPProblem(st, fn.scaled(2.5)), gap_tol=1e-11).value
        assert scaled == pytest.approx(2.5 * base, rel=1e-9)
        shifted = solve(SDPProblem(st, fn + LinearFunctional({}, 3.0)), gap_tol=1e-11).value
        assert shifted == pytest.approx(base + 3.0, rel=1e-9)

    def test_determinism(self, chsh_problem):
        a = solve(chsh_problem)
        b = solve(chsh_problem)
        assert abs(a.value - b.value) < 1e-10
        assert a.iterations == b.iterations


class TestConstraintsAndStatuses:
    def test_equality_constraint(self):
        st = ad_hoc_structure(2, [[(0, 1)]], [(0, 0), (1, 1)])
        constraint = (LinearFunctional({0: 1.0}), "=", 0.25)
        sol = solve(SDPProblem(st, LinearFunctional({0: 1.0}), (constraint,)))
        assert sol.status == "optimal"
        assert sol.value == pytest.approx(0.25, abs=1e-8)

    def test_inequality_constraints(self):
        st = ad_hoc_structure(2, [[(0, 1)]], [(0, 0), (1, 1)])
        fn = LinearFunctional({0: 1.0})
        sol = solve(SDPProblem(st, fn, ((fn, "<=", 0.5),)))
        assert sol.value == pytest.approx(0.5, abs=1e-7)
        sol = solve(SDPProblem(st, fn, ((fn, ">=", -0.25),)), "min")
        assert sol.value == pytest.approx(-0.25, abs=1e-7)

    def test_contradictory_equalities_infeasible(self):
        st = ad_hoc_structure(2, [[(0, 1)]], [(0, 0), (1, 1)])
        fn = LinearFunctional({0: 1.0})
        sol = solve(SDPProblem(st, fn, ((fn, "=", 0.1), (fn, "=", 0.2))))
        assert sol.status == "infeasible"

    def test_psd_incompatible_pin_infeasible(self):
        # pinning the off-diagonal of a unit-diagonal 2x2 block to 2 exits the cone
        st = ad_hoc_structure(2, [[(0, 1)]], [(0, 0), (1, 1)])
        fn = LinearFunctional({0: 1.0})
        sol = solve(SDPProblem(st, fn, ((fn, "=", 2.0),)))
        assert sol.status == "infeasible"
        with pytest.raises(InfeasibleError):
            solve_or_raise(SDPProblem(st, fn, ((fn, "=", 2.0),)))

    def test_infeasible_psd_cone(self, chsh_problem):
        # Bell value above the quantum maximum cannot be reached
        st = chsh_problem.structure
        fn = chsh_problem.objective
        sol = solve(SDPProblem(st, LinearFunctional({0: 1.0}), ((fn, ">=", 3.9),)))
        assert sol.status == "infeasible"

    def test_unbounded_diagonal(self):
        # free diagonal entry with no cap: maximize it
        st = ad_hoc_structure(
            2, [[(1, 1)], [(0, 1)]], [(0, 0)],
            words=[((0,), ()), ((1,), ())],
        )
        sol = solve(SDPProblem(st, LinearFunctional({0: 1.0})))
        assert sol.status == "unbounded"

    def test_constraint_variable_validation(self, chsh_problem):
        with pytest.raises(ValueError):
            SDPProblem(
                chsh_problem.structure,
                LinearFunctional({9999: 1.0}),
            )
        with pytest.raises(ValueError):
            SDPProblem(
                chsh_problem.structure,
                chsh_problem.objective,
                ((chsh_problem.objective, "!=", 1.0),),
            )

    def test_solution_invariants_on_constrained_solve(self, chsh_problem):
        st = chsh_problem.structure
        fn = chsh_problem.objective
        target = 2.7
        sol = solve(SDPProblem(st, LinearFunctional({0: 1.0}), ((fn, "=", target),)))
        assert sol.status == "optimal"
        assert sol.gap <= 1e-8
        assert fn.evaluate(sol.assignment) == pytest.approx(target, abs=1e-7)
        assert np.linalg.eigvalsh(st.matrix(sol.assignment)).min() >= -1e-7


class TestDumpFormat:
    def test_roundtrip(self, chsh_problem):
        st = chsh_problem.structure
        problem = SDPProblem(
            st,
            chsh_problem.objective,
            ((chsh_problem.objective, ">=", 1.25), (LinearFunctional({0: 1.0}, 0.5), "=", 0.75)),
        )
        text = dump_problem(problem)
        loaded = load_problem(text)
        assert loaded.structure.dimension == st.dimension
        assert loaded.structure.pinned == st.pinned
        assert loaded.structure.cells == st.cells
        assert loaded.structure.words == st.words
        assert loaded.objective == problem.objective
        assert loaded.constraints == problem.constraints
        # and it solves to the same value
        assert solve(loaded).value == pytest.approx(solve(problem).value, abs=1e-8)

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            load_problem("not a dump")
