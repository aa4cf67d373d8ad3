import numpy as np
import pytest

from boxdyn.core import ArgumentError, BoxProblem, EvaluationError
from boxdyn.problems import (
    example1,
    example2,
    fd_check_gradient,
    genwood,
    genwood_block_terms,
    genwood_optimum,
    problem_from_id,
)

from helpers import shipped_problems


class TestExamples:
    def test_example1(self):
        p = example1()
        assert p.f(np.array([0.0, 2.0])) == 1.0
        np.testing.assert_array_equal(p.grad(np.array([-1.0, 2.0])), [0, 0])
        np.testing.assert_array_equal(p.upper, [10, 10])

    def test_example2(self):
        p = example2()
        assert p.f(np.array([0.5, 0.5])) == pytest.approx(0.375, abs=1e-15)
        np.testing.assert_array_equal(p.grad(np.array([0.0, 0.0])), [1, 0])
        np.testing.assert_array_equal(example2(0.1).lower, [0.1, 0.1])


class TestGenwood:
    def test_all_ones(self):
        assert genwood(8).f(np.ones(8)) == 1.0

    def test_optimum_pattern(self):
        opt = genwood_optimum(8)
        np.testing.assert_allclose(opt[:4], [1.1, 1.1753, 1.1, 1.1715], atol=5e-5)
        np.testing.assert_array_equal(opt[4:], opt[:4])

    def test_optimum_is_kkt(self):
        from boxdyn.kkt import kkt_report

        p = genwood(100)
        rep = kkt_report(genwood_optimum(100), p)
        assert rep.residual_norm < 1e-10 and rep.strict_complementarity

    @pytest.mark.parametrize("n", [0, 3, 6, 4.5])
    def test_bad_n(self, n):
        with pytest.raises(ArgumentError):
            genwood(n)

    def test_block_separable(self, rng):
        p = genwood(12)
        th = rng.uniform(0.5, 2.5, 12)
        blocks = [genwood(4).f(th[i : i + 4]) - 1.0 for i in range(0, 12, 4)]
        assert p.f(th) == 1.0 + sum(genwood_block_terms(th))
        assert p.f(th) == pytest.approx(1.0 + sum(blocks), rel=1e-15)


class TestFdCheck:
    def test_examples(self):
        assert fd_check_gradient(example1(), [3.0, 7.0])[1]
        assert fd_check_gradient(genwood(8), np.full(8, 1.5))[1]

    def test_corrupted_gradient_fails(self):
        p = example1()
        bad = BoxProblem(2, p.objective, lambda t: p.gradient(t) * np.array([1.0, -1.0]), p.lower, p.upper)
        err, ok = fd_check_gradient(bad, [3.0, 7.0])
        assert not ok and err > 1.0

    def test_non_finite(self):
        p = BoxProblem(1, lambda t: np.inf if t[0] <= 0 else float(np.log(t[0])), lambda t: 1 / t, np.zeros(1), np.ones(1))
        with pytest.raises(EvaluationError):
            fd_check_gradient(p, [1e-9], h=1e-6)

    def test_bad_step(self):
        with pytest.raises(ArgumentError):
            fd_check_gradient(example1(), [1.0, 1.0], h=0.0)

    def test_random_interior_points(self, rng):
        worst = 0.0
        for p in shipped_problems() + [genwood(100)]:
            for _ in range(20):
                err, _ = fd_check_gradient(p, rng.uniform(p.lower, p.upper))
                worst = max(worst, err)
        assert worst <= 1e-6


class TestProblemIds:
    @pytest.mark.parametrize("pid, n", [("example1", 2), ("example2", 2), ("example2:0.1", 2), ("genwood:8", 8), ("genwood", 100)])
    def test_parse(self, pid, n):
        p, spec = problem_from_id(pid)
        assert p.n == n and spec.default_init.shape == (n,)

    @pytest.mark.parametrize("pid", ["nope", "example1:3", "genwood:x", "genwood:6", "example2:0.5:1"])
    def test_reject(self, pid):
        with pytest.raises(ArgumentError):
            problem_from_id(pid)
