"""Moment structure layer: bases, entry identifications, functionals."""
import numpy as np
import pytest

from bellcert.npa import (
    LinearFunctional,
    bell_functional,
    build_basis,
    build_moment_structure,
    probability_functional,
    word_adjoint,
    word_product,
)
from bellcert.scenario import CoefficientMatrix, Scenario


def structure(n, m, level):
    return build_moment_structure(build_basis(Scenario(n, m), level))


class TestWords:
    def test_idempotence_collapse(self):
        assert word_product(((0,), ()), ((0,), ())) == ((0,), ())
        assert word_product(((0, 1), ()), ((1,), ())) == ((0, 1), ())

    def test_cross_party_commutation_only(self):
        # B letters commute past A letters; same-party order is preserved
        w = word_product(((), (2,)), ((0, 1), ()))
        assert w == ((0, 1), (2,))
        assert word_product(((0,), ()), ((1,), ())) == ((0, 1), ())
        assert word_product(((1,), ()), ((0,), ())) == ((1, 0), ())

    def test_adjoint_reverses_blocks(self):
        assert word_adjoint(((0, 1), (2, 0))) == ((1, 0), (0, 2))


class TestBasis:
    def test_level1_sizes(self):
        assert len(build_basis(Scenario(2, 2), "1")) == 5
        assert len(build_basis(Scenario(4, 3), "1")) == 8

    def test_level_1ab_sizes(self):
        # identity + N + M + N*M mixed words
        assert len(build_basis(Scenario(4, 3), "1+AB")) == 20
        basis = build_basis(Scenario(1, 1), "1+AB")
        assert [w for w in basis.words] == [((), ()), ((0,), ()), ((), (0,)), ((0,), (0,))]

    def test_level2_contains_within_party_pairs(self):
        basis = build_basis(Scenario(2, 2), "2")
        assert ((0, 1), ()) in basis.words and ((1, 0), ()) in basis.words
        assert ((), (0, 1)) in basis.words
        assert len(basis) == 1 + 2 + 2 + 2 + 2 + 4

    def test_unknown_level(self):
        with pytest.raises(ValueError):
            build_basis(Scenario(2, 2), "3")

    def test_identity_first(self):
        for level in ("1", "1+AB", "2"):
            assert build_basis(Scenario(2, 3), level).words[0] == ((), ())


class TestMomentStructure:
    def test_minimal_scenario_level1_has_three_variables(self):
        # 3x3 moment matrix over {1, A, B}: variables <A>, <B>, <AB> only.
        st = structure(1, 1, "1")
        assert st.dimension == 3
        assert st.n_vars == 3

    def test_idempotence_identification(self):
        st = structure(2, 2, "1")
        assert st.var(((0, 0), ())) == st.var(((0,), ()))

    def test_commutation_hermiticity_identification(self):
        st = structure(2, 2, "1")
        assert st.var(((0,), (1,))) == st.var(word_adjoint(((0,), (1,))))

    def test_variable_count_below_full_triangle(self):
        for level in ("1", "1+AB", "2"):
            st = structure(2, 2, level)
            d = st.dimension
            assert st.n_vars < d * (d + 1) // 2

    def test_pinned_identity(self):
        st = structure(2, 2, "1+AB")
        assert (0, 0) in st.pinned
        f0, f = st.arrays()
        assert f0[0, 0] == 1.0
        # every upper-triangle entry is pinned or belongs to exactly one cell
        counts = np.zeros((st.dimension, st.dimension))
        for (i, j) in st.pinned:
            counts[i, j] += 1
        for cell in st.cells:
            for (i, j) in cell:
                counts[i, j] += 1
        assert (counts[np.triu_indices(st.dimension)] == 1).all()

    def test_matrix_assembly_matches_assignment(self, rng):
        st = structure(2, 2, "1+AB")
        y = rng.random(st.n_vars)
        mat = st.matrix(y)
        assert mat[0, 0] == 1.0
        k = st.var(((0,), (1,)))
        i, j = st.cells[k][0]
        assert mat[i, j] == y[k]


class TestFunctionals:
    def test_bell_functional_single_entry(self):
        # one correlator expands to 4<AB> - 2<A> - 2<B> + 1
        st = structure(2, 2, "1")
        alpha = CoefficientMatrix([[1, 0], [0, 0]])
        fn = bell_functional(alpha, st)
        assert fn.constant == 1.0
        assert fn.terms[st.var(((0,), (0,)))] == 4.0
        assert fn.terms[st.var(((0,), ()))] == -2.0
        assert fn.terms[st.var(((), (0,)))] == -2.0

    def test_bell_functional_uniform_assignment(self):
        # uniform behavior: <A>=<B>=1/2, <AB>=1/4 -> every correlator is 0
        st = structure(2, 2, "1")
        alpha = CoefficientMatrix([[1, 1], [1, -1]])
        y = np.zeros(st.n_vars)
        for x in range(2):
            y[st.var(((x,), ()))] = 0.5
            y[st.var(((), (x,)))] = 0.5
            for yy in range(2):
                y[st.var(((x,), (yy,)))] = 0.25
        assert bell_functional(alpha, st).evaluate(y) == pytest.approx(0.0, abs=1e-12)

    def test_bell_functional_linearity(self, rng):
        st = structure(2, 2, "1+AB")
        alpha = CoefficientMatrix([[1, -1], [0, 1]])
        total = bell_functional(alpha, st)
        y = rng.random(st.n_vars)
        acc = 0.0
        for x in range(2):
            for yy in range(2):
                if alpha.entries[x, yy] == 0:
                    continue
                single = np.zeros((2, 2), dtype=int)
                single[x, yy] = alpha.entries[x, yy]
                acc += bell_functional(CoefficientMatrix(single), st).evaluate(y)
        assert total.evaluate(y) == pytest.approx(acc, abs=1e-12)

    def test_bell_functional_at_tsirelson_point(self, chsh, chsh_oracle):
        st = structure(2, 2, "1+AB")
        y = chsh_oracle.moment_assignment(st)
        assert bell_functional(chsh, st).evaluate(y) == pytest.approx(
            2 * np.sqrt(2), abs=1e-4
        )

    def test_probability_functionals_sum_to_one(self):
        st = structure(2, 2, "1+AB")
        total = LinearFunctional()
        for a in (-1, 1):
            for b in (-1, 1):
                total = total + probability_functional(a, b, 0, 1, st)
        assert total.constant == 1.0
        assert all(abs(c) < 1e-15 for c in total.terms.values())

    def test_probability_functional_values(self, chsh_oracle):
        st = structure(2, 2, "1+AB")
        y = chsh_oracle.moment_assignment(st)
        q = (2 + np.sqrt(2)) / 8
        assert probability_functional(1, 1, 0, 0, st).evaluate(y) == pytest.approx(
            q, abs=1e-4
        )
        # uniform moments: P(-,-) = 1 - 1/2 - 1/2 + 1/4
        y_uniform = np.zeros(st.n_vars)
        for x in range(2):
            y_uniform[st.var(((x,), ()))] = 0.5
            y_uniform[st.var(((), (x,)))] = 0.5
            for yy in range(2):
                y_uniform[st.var(((x,), (yy,)))] = 0.25
        assert probability_functional(-1, -1, 0, 0, st).evaluate(y_uniform) == pytest.approx(0.25)

    def test_correlator_identity_at_coefficient_level(self):
        # 4 P(++) - 2<A> - 2<B> + 1 == P(--) - P(-+) - P(+-) + P(++)
        st = structure(2, 2, "1+AB")
        lhs = probability_functional(1, 1, 0, 0, st).scaled(4.0)
        lhs = lhs + LinearFunctional({st.var(((0,), ())): -2.0, st.var(((), (0,))): -2.0}, 1.0)
        rhs = (
            probability_functional(-1, -1, 0, 0, st)
            + probability_functional(-1, 1, 0, 0, st).scaled(-1.0)
            + probability_functional(1, -1, 0, 0, st).scaled(-1.0)
            + probability_functional(1, 1, 0, 0, st)
        )
        assert lhs.constant == pytest.approx(rhs.constant, abs=1e-15)
        keys = set(lhs.terms) | set(rhs.terms)
        for k in keys:
            assert lhs.terms.get(k, 0.0) == pytest.approx(rhs.terms.get(k, 0.0), abs=1e-15)

    def test_invalid_outcome_and_setting(self):
        st = structure(2, 2, "1")
        with pytest.raises(ValueError):
            probability_functional(0, 1, 0, 0, st)
        with pytest.raises(ValueError):
            probability_functional(1, 1, 2, 0, st)


class TestFeasiblePointProperties:
    def test_probabilities_valid_on_projected_feasible_points(self, rng):
        """Alternating projection onto {PSD} and {structure-compatible}
        yields feasible moment assignments; from level 1+AB upward the
        four outcome functionals at each setting pair must then form a
        distribution.  (At plain level 1 this is provably not implied:
        the word A - AB whose square certifies P(+,-) >= 0 leaves the
        basis span, and explicit PSD counterexamples exist.)
        """
        st = structure(2, 2, "1+AB")
        d = st.dimension

        # A strictly interior feasible point: average of the moment vectors
        # of many random deterministic strategies (each is rank-one PSD and
        # structure-compatible, so the average is feasible; genericity makes
        # it interior).  Used to repair the tail of slow projection runs.
        def det_moments(a_bits, b_bits):
            vals = []
            for word in st.words:
                v = 1.0
                for x in word[0]:
                    v *= a_bits[x]
                for yy in word[1]:
                    v *= b_bits[yy]
                vals.append(v)
            return np.array(vals)

        interior = np.mean(
            [det_moments(rng.integers(0, 2, 2), rng.integers(0, 2, 2)) for _ in range(60)],
            axis=0,
        )
        lam_int = np.linalg.eigvalsh(st.matrix(interior)).min()
        assert lam_int > 1e-4

        for _ in range(10):
            mat = rng.normal(size=(d, d))
            mat = mat @ mat.T / d
            for _sweep in range(2000):
                # project onto the structure subspace (pin identity, average cells)
                y = np.array([np.mean([mat[i, j] for (i, j) in cell]) for cell in st.cells])
                mat = st.matrix(y)
                # project onto the PSD cone
                w, q = np.linalg.eigh(mat)
                if w.min() > -1e-10:
                    break
                mat = (q * np.clip(w, 0.0, None)) @ q.T
            y = np.array([np.mean([mat[i, j] for (i, j) in cell]) for cell in st.cells])
            deficit = max(0.0, -float(np.linalg.eigvalsh(st.matrix(y)).min()))
            if deficit > 0.0:
                t = min(0.5, 1.0000001 * deficit / (deficit + lam_int))
                y = (1 - t) * y + t * interior
            assert np.linalg.eigvalsh(st.matrix(y)).min() > -1e-9
            for x in range(2):
                for yy in range(2):
                    probs = [
                        probability_functional(a, b, x, yy, st).evaluate(y)
                        for a in (-1, 1)
                        for b in (-1, 1)
                    ]
                    assert sum(probs) == pytest.approx(1.0, abs=1e-9)
                    assert all(v >= -1e-6 for v in probs)
                    assert all(v <= 1 + 1e-6 for v in probs)

    def test_level1_admits_negative_probability(self):
        """Documents the level-1 gap: a PSD, structure-compatible moment
        matrix whose P(+,-) functional is negative."""
        st = structure(2, 2, "1")
        y = np.zeros(st.n_vars)
        for x in range(2):
            y[st.var(((x,), ()))] = 0.2
            y[st.var(((), (x,)))] = 0.9
            for yy in range(2):
                y[st.var(((x,), (yy,)))] = 0.3
        y[st.var(((0, 1), ()))] = 0.2
        y[st.var(((), (0, 1)))] = 0.9
        assert np.linalg.eigvalsh(st.matrix(y)).min() > -1e-12
        value = probability_functional(1, -1, 0, 0, st).evaluate(y)
        assert value == pytest.approx(-0.1, abs=1e-12)
