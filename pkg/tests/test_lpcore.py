import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from nfvcoord.lpcore import (
    LinearProgram,
    LpFormatError,
    LpStatus,
    Relation,
    from_rows,
    solve,
)
from oracles import vertex_enumeration


def random_lp(rng, n=None, m=None):
    n = n or int(rng.integers(1, 9))
    m = m if m is not None else int(rng.integers(0, 7))
    c = rng.integers(-5, 6, size=n).astype(float)
    A = rng.integers(-4, 5, size=(m, n)).astype(float)
    rel = list(rng.choice(["<=", ">=", "=="], size=m, p=[0.6, 0.25, 0.15]))
    x0 = rng.uniform(0, 3, size=n)  # keep most instances feasible
    b = A @ x0 + np.where(np.array(rel) == "<=", 1.0, np.where(np.array(rel) == ">=", -1.0, 0.0))
    lower = rng.choice([0.0, -2.0], size=n)
    upper = rng.choice([3.0, 5.0], size=n)
    return c, A, rel, b, lower, upper


class TestOracle:
    def test_random_lps_match_vertex_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            c, A, rel, b, lo, hi = random_lp(rng)
            ref = vertex_enumeration(c, A, rel, b, lo, hi)
            sol = solve(LinearProgram(c, A, tuple(rel), b, lo, hi))
            if ref is None:
                assert sol.status is LpStatus.INFEASIBLE
            else:
                assert sol.optimal
                assert sol.objective == pytest.approx(ref[0], abs=1e-6)

    def test_infeasible_lps_detected(self):
        lp = from_rows([1, 1], [([1, 1], "<=", 1), ([1, 1], ">=", 2)])
        assert solve(lp).status is LpStatus.INFEASIBLE
        assert solve(lp, "highs").status is LpStatus.INFEASIBLE

    def test_tableau_agrees_with_highs(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            c, A, rel, b, lo, hi = random_lp(rng)
            lp = LinearProgram(c, A, tuple(rel), b, lo, hi)
            a, h = solve(lp), solve(lp, "highs")
            assert a.status is h.status
            if a.optimal:
                assert a.objective == pytest.approx(h.objective, abs=1e-6)


class TestExamples:
    def test_textbook_max(self):
        # max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
        lp = from_rows([-3, -5], [([1, 0], "<=", 4), ([0, 2], "<=", 12), ([3, 2], "<=", 18)])
        sol = solve(lp)
        assert sol.objective == pytest.approx(-36.0)
        np.testing.assert_allclose(sol.x, [2.0, 6.0], atol=1e-9)

    def test_unbounded(self):
        lp = from_rows([-1, 0], [([1, -1], "<=", 1)])
        assert solve(lp).status is LpStatus.UNBOUNDED
        assert solve(lp, "highs").status is LpStatus.UNBOUNDED

    def test_equality_and_free_variable(self):
        lp = from_rows([1, 1], [([1, -1], "==", 3)], lower=[-np.inf, -5], upper=[np.inf, np.inf])
        sol = solve(lp)
        assert sol.objective == pytest.approx(-7.0)
        np.testing.assert_allclose(sol.x, [-2.0, -5.0], atol=1e-9)

    def test_beale_cycling_example_terminates(self):
        # classical degenerate instance that cycles under the largest-coefficient rule
        c = [-0.75, 150, -0.02, 6]
        rows = [
            ([0.25, -60, -0.04, 9], "<=", 0),
            ([0.5, -90, -0.02, 3], "<=", 0),
            ([0, 0, 1, 0], "<=", 1),
        ]
        sol = solve(from_rows(c, rows))
        assert sol.objective == pytest.approx(-0.05)

    def test_redundant_equalities(self):
        lp = from_rows([1, 2], [([1, 1], "==", 2), ([2, 2], "==", 4)])
        sol = solve(lp)
        assert sol.objective == pytest.approx(2.0)

    def test_no_constraints(self):
        lp = LinearProgram(np.array([1.0, -1.0]), np.zeros((0, 2)), (), np.zeros(0), upper=np.array([1.0, 2.0]))
        sol = solve(lp)
        assert sol.objective == pytest.approx(-2.0)

    def test_sparse_matrix_accepted(self):
        A = sp.csr_matrix(np.array([[1.0, 1.0]]))
        lp = LinearProgram(np.array([-1.0, -2.0]), A, (Relation.LE,), np.array([4.0]))
        assert solve(lp).objective == pytest.approx(-8.0)
        assert solve(lp, "highs").objective == pytest.approx(-8.0)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        c, A, rel, b, lo, hi = random_lp(rng, 6, 5)
        lp = LinearProgram(c, A, tuple(rel), b, lo, hi)
        assert solve(lp) == solve(lp)


class TestFormatErrors:
    def test_ragged_rows(self):
        with pytest.raises(LpFormatError, match="row 1"):
            from_rows([1, 1], [([1, 1], "<=", 1), ([1], "<=", 1)])

    def test_wrong_width(self):
        with pytest.raises(LpFormatError):
            LinearProgram(np.ones(2), np.ones((1, 3)), ("<=",), np.ones(1))

    def test_bad_relation(self):
        with pytest.raises(LpFormatError):
            from_rows([1], [([1], "<>", 1)])

    def test_rhs_count(self):
        with pytest.raises(LpFormatError):
            LinearProgram(np.ones(2), np.ones((2, 2)), ("<=", "<="), np.ones(3))

    def test_inverted_bounds(self):
        with pytest.raises(LpFormatError):
            LinearProgram(np.ones(1), np.ones((1, 1)), ("<=",), np.ones(1), lower=[2.0], upper=[1.0])

    def test_nan_bound(self):
        with pytest.raises(LpFormatError):
            LinearProgram(np.ones(1), np.ones((1, 1)), ("<=",), np.ones(1), lower=[np.nan])

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            solve(from_rows([1], [([1], "<=", 1)]), "interior")


@st.composite
def feasible_lps(draw):
    n = draw(st.integers(1, 5))
    m = draw(st.integers(0, 4))
    ints = st.integers(-3, 3)
    c = np.array(draw(st.lists(ints, min_size=n, max_size=n)), float)
    A = np.array(draw(st.lists(st.lists(ints, min_size=n, max_size=n), min_size=m, max_size=m)), float).reshape(m, n)
    x0 = np.array(draw(st.lists(st.integers(0, 3), min_size=n, max_size=n)), float)
    b = A @ x0 + draw(st.integers(0, 2))
    return LinearProgram(c, A, ("<=",) * m, b, np.zeros(n), np.full(n, 4.0)), x0


@settings(max_examples=60, deadline=None)
@given(feasible_lps())
def test_optimum_is_feasible_and_no_worse_than_known_point(case):
    lp, x0 = case
    sol = solve(lp)
    assert sol.optimal
    cons, bound = lp.violation(sol.x)
    assert cons <= 1e-7 and bound == 0.0
    assert sol.objective <= float(lp.c @ x0) + 1e-9


@settings(max_examples=40, deadline=None)
@given(feasible_lps(), st.floats(0.1, 10))
def test_objective_scales_with_cost(case, k):
    lp, _ = case
    scaled = LinearProgram(lp.c * k, lp.A, lp.relations, lp.b, lp.lower, lp.upper)
    assert solve(scaled).objective == pytest.approx(k * solve(lp).objective, abs=1e-6)
