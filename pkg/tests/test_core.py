import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boxdyn.core import (
    ActiveBoundSet,
    ArgumentError,
    BoxProblem,
    GainMatrix,
    IntegratorKind,
    LimiterMode,
    Method,
    SelectionMatrixView,
    SolveOptions,
    check_feasible,
    project_to_box,
)


def box(n=2, lo=0.0, hi=10.0):
    return BoxProblem(n, lambda t: float(t @ t), lambda t: 2 * t, np.full(n, lo), np.full(n, hi))


class TestBoxProblem:
    def test_bounds_are_read_only(self):
        p = box()
        with pytest.raises(ValueError):
            p.lower[0] = 3.0

    @pytest.mark.parametrize(
        "lower, upper",
        [([0, 1], [1, 1]), ([2, 0], [1, 1]), ([np.nan, 0], [1, 1]), ([np.inf, 0], [np.inf, 1]), ([0, 0], [-np.inf, 1])],
    )
    def test_rejects_bad_bounds(self, lower, upper):
        with pytest.raises(ArgumentError):
            BoxProblem(2, sum, np.asarray, np.array(lower, float), np.array(upper, float))

    def test_rejects_shape_and_n(self):
        with pytest.raises(ArgumentError):
            BoxProblem(3, sum, np.asarray, np.zeros(2), np.ones(2))
        with pytest.raises(ArgumentError):
            BoxProblem(0, sum, np.asarray, np.zeros(0), np.ones(0))

    def test_infinite_bounds_allowed(self):
        p = BoxProblem(2, sum, np.asarray, np.array([-np.inf, 0.0]), np.array([np.inf, np.inf]))
        assert np.isinf(p.upper).all()


class TestGainMatrix:
    def test_diagonal_apply_solve(self):
        K = GainMatrix.diagonal([0.5, 2.0])
        np.testing.assert_array_equal(K.apply([2.0, 2.0]), [1.0, 4.0])
        np.testing.assert_array_equal(K.solve([1.0, 4.0]), [2.0, 2.0])
        assert K.is_diagonal and K.n == 2

    def test_dense_rejects_indefinite(self):
        # eigenvalues 3 and -1
        with pytest.raises(ArgumentError):
            GainMatrix.dense([[1, 2], [2, 1]])

    def test_dense_rejects_asymmetric_and_nonsquare(self):
        with pytest.raises(ArgumentError):
            GainMatrix.dense([[1, 0.1], [0.0, 1]])
        with pytest.raises(ArgumentError):
            GainMatrix.dense([[1, 0, 0], [0, 1, 0]])

    @pytest.mark.parametrize("d", [[1.0, 0.0], [1.0, -2.0], [np.inf, 1.0]])
    def test_diagonal_rejects_nonpositive(self, d):
        with pytest.raises(ArgumentError):
            GainMatrix.diagonal(d)

    def test_dense_with_zero_offdiagonal_counts_as_diagonal(self):
        assert GainMatrix.dense(np.eye(3)).is_diagonal
        assert not GainMatrix.dense([[0.5, 0.2], [0.2, 1.0]]).is_diagonal

    def test_dense_solve_inverts_apply(self, rng):
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        K = GainMatrix.dense(q @ np.diag([1, 2, 3, 4.0]) @ q.T + 0 * np.eye(4))
        v = rng.normal(size=4)
        np.testing.assert_allclose(K.apply(K.solve(v)), v, atol=1e-12)


class TestProjectAndFeasible:
    def test_examples(self):
        p = box()
        np.testing.assert_array_equal(project_to_box([5, 5], p), [5, 5])
        np.testing.assert_array_equal(project_to_box([-1, 12], p), [0, 10])
        np.testing.assert_array_equal(project_to_box([0, 2], p), [0, 2])

    def test_check_feasible_examples(self):
        p = box()
        assert check_feasible([5, 5], p, 1e-8) == (True, 0.0)
        ok, worst = check_feasible([10 + 1e-9, 5], p, 1e-8)
        assert ok and worst == pytest.approx(1e-9, rel=1e-6)
        assert check_feasible([11, 5], p, 1e-8) == (False, 1.0)

    def test_dimension_errors(self):
        p = box()
        with pytest.raises(ArgumentError):
            project_to_box([1, 2, 3], p)
        with pytest.raises(ArgumentError):
            check_feasible([1.0], p)
        with pytest.raises(ArgumentError):
            check_feasible([1.0, 1.0], p, -1.0)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
    def test_idempotent_and_feasible(self, x):
        p = box(3, -1.0, 2.5)
        once = project_to_box(x, p)
        np.testing.assert_array_equal(project_to_box(once, p), once)
        assert check_feasible(once, p, 0.0)[0]


class TestSelectionAndActive:
    def test_conflicting_rows_rejected(self):
        with pytest.raises(ArgumentError):
            SelectionMatrixView(((0, 1), (0, -1)))
        with pytest.raises(ArgumentError):
            SelectionMatrixView(((0, 2),))
        with pytest.raises(ArgumentError):
            ActiveBoundSet(lower={1}, upper={1})

    def test_projector_structure(self):
        h = SelectionMatrixView(((0, 1), (2, -1)))
        H = h.matrix(4)
        np.testing.assert_array_equal(H, [[1, 0, 0, 0], [0, 0, -1, 0]])
        np.testing.assert_array_equal(np.diag(np.linalg.pinv(H) @ H), [1, 0, 1, 0])
        np.testing.assert_array_equal(h.projector_mask(4), [True, False, True, False])

    def test_rows_round_trip(self):
        a = ActiveBoundSet(lower={0, 3}, upper={1})
        assert ActiveBoundSet.from_rows(a.rows().rows) == a
        assert len(a) == 3 and a.to_dict() == {"lower": [0, 3], "upper": [1]}
        assert not ActiveBoundSet()


class TestOptions:
    def test_freeze_default_follows_integrator(self):
        assert SolveOptions().freeze_activity is False
        assert SolveOptions(integrator="stiff").freeze_activity is True
        assert SolveOptions(integrator=IntegratorKind.STIFF_IMPLICIT, freeze_activity=False).freeze_activity is False

    def test_enum_coercion(self):
        assert SolveOptions(method="general-dynamic").method is Method.GENERAL_DYNAMIC

    @pytest.mark.parametrize("kw", [{"rel_tol": 0}, {"horizon": -1.0}, {"sample_stride": 0}, {"abs_tol": -1e-6}])
    def test_rejects_bad_values(self, kw):
        with pytest.raises((ArgumentError, ValueError)):
            SolveOptions(**kw)

    def test_limiter_gains(self):
        with pytest.raises(ArgumentError):
            LimiterMode.soft(k_upper=0.0)
        assert LimiterMode.exact().describe() == {"kind": "exact"}
