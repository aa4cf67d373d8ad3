"""Benchmark problems with analytic gradients, plus a finite-difference gradient check."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ArgumentError, BoxProblem, EvaluationError


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    params: dict
    default_init: np.ndarray
    optimum: Optional[np.ndarray] = None


def example1() -> BoxProblem:
    """(theta1 + 1)^2 + (theta2 - 2)^2 on [0, 10]^2; optimum [0, 2]."""

    def f(t):
        return (t[0] + 1.0) ** 2 + (t[1] - 2.0) ** 2

    def g(t):
        return np.array([2.0 * (t[0] + 1.0), 2.0 * (t[1] - 2.0)])

    return BoxProblem(2, f, g, np.zeros(2), np.full(2, 10.0), name="example1")


def example2(lower: float = 0.0) -> BoxProblem:
    """Degenerate at the optimum when ``lower == 0`` (zero gradient in theta2 on its bound)."""

    def f(t):
        return -0.5 * (t[0] ** 2 - t[1] ** 2) - t[0] ** 2 * t[1] + t[0]

    def g(t):
        return np.array([-t[0] - 2.0 * t[0] * t[1] + 1.0, t[1] - t[0] ** 2])

    name = "example2" if lower == 0 else f"example2:{lower:g}"
    return BoxProblem(2, f, g, np.full(2, float(lower)), np.ones(2), name=name)


def _wood_blocks(theta: np.ndarray):
    t = np.asarray(theta, dtype=float).reshape(-1, 4)
    return t[:, 0], t[:, 1], t[:, 2], t[:, 3]


def genwood_block_terms(theta) -> np.ndarray:
    """Per-block objective contributions, without the constant 1."""
    a, b, c, d = _wood_blocks(theta)
    return (
        100.0 * (b - a**2) ** 2
        + (1.0 - a) ** 2
        + 90.0 * (d - c**2) ** 2
        + (1.0 - c) ** 2
        + 10.0 * (b + d - 2.0) ** 2
        + 0.1 * (b - d) ** 2
    )


def genwood(n: int = 100) -> BoxProblem:
    """Generalized Wood function on [1.1, 2.1]^n, n a positive multiple of 4."""
    if int(n) != n or n < 4 or n % 4:
        raise ArgumentError(f"genwood needs n >= 4 with n % 4 == 0, got {n!r}")
    n = int(n)

    def f(t):
        return 1.0 + float(np.sum(genwood_block_terms(t)))

    def g(t):
        a, b, c, d = _wood_blocks(t)
        out = np.empty((a.shape[0], 4))
        out[:, 0] = -400.0 * (b - a**2) * a - 2.0 * (1.0 - a)
        out[:, 1] = 200.0 * (b - a**2) + 20.0 * (b + d - 2.0) + 0.2 * (b - d)
        out[:, 2] = -360.0 * (d - c**2) * c - 2.0 * (1.0 - c)
        out[:, 3] = 180.0 * (d - c**2) + 20.0 * (b + d - 2.0) - 0.2 * (b - d)
        return out.ravel()

    return BoxProblem(n, f, g, np.full(n, 1.1), np.full(n, 2.1), name=f"genwood:{n}")


def genwood_optimum(n: int) -> np.ndarray:
    """Closed-form optimum: odd components on 1.1, even pair from a 2x2 linear solve."""
    a = c = 1.1
    # stationarity in (b, d) with a, c pinned at the lower bound
    m = np.array([[200.0 + 20.0 + 0.2, 20.0 - 0.2], [20.0 - 0.2, 180.0 + 20.0 + 0.2]])
    rhs = np.array([200.0 * a**2 + 40.0, 180.0 * c**2 + 40.0])
    b, d = np.linalg.solve(m, rhs)
    return np.tile([a, b, c, d], n // 4)


def fd_check_gradient(problem: BoxProblem, theta, h: Optional[float] = None, tol: float = 1e-5):
    """Compare the analytic gradient with central differences.

    Returns ``(max_rel_error, passed)``. The relative error of component i uses
    ``max(1, |grad_i|)`` as denominator. With ``h=None`` the step for component i is
    ``eps**(1/3) * (1 + |theta_i|)``.
    """
    theta = np.asarray(theta, dtype=float)
    grad = problem.grad(theta)
    if not np.all(np.isfinite(grad)):
        raise EvaluationError("analytic gradient is not finite")
    fd = np.empty(problem.n)
    for i in range(problem.n):
        step = h if h is not None else np.cbrt(np.finfo(float).eps) * (1.0 + abs(theta[i]))
        if not step > 0:
            raise ArgumentError("h must be > 0")
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += step
        tm[i] -= step
        fp, fm = problem.f(tp), problem.f(tm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"objective not finite near component {i}")
        fd[i] = (fp - fm) / (tp[i] - tm[i])
    err = float(np.max(np.abs(fd - grad) / np.maximum(1.0, np.abs(grad))))
    return err, err <= tol


def problem_from_id(problem_id: str) -> tuple[BoxProblem, ProblemSpec]:
    """Parse ids like ``example1``, ``example2:0.1``, ``genwood:100``."""
    name, _, arg = problem_id.strip().partition(":")
    try:
        if name == "example1":
            if arg:
                raise ArgumentError("example1 takes no parameter")
            return example1(), ProblemSpec(
                "example1", {}, np.array([5.0, 5.0]), np.array([0.0, 2.0])
            )
        if name == "example2":
            lower = float(arg) if arg else 0.0
            prob = example2(lower)
            opt = np.array([lower, lower]) if lower in (0.0, 0.1) else None
            return prob, ProblemSpec(
                prob.name, {"lower": lower}, np.array([0.5, 0.5]), opt
            )
        if name == "genwood":
            n = int(arg) if arg else 100
            prob = genwood(n)
            return prob, ProblemSpec(prob.name, {"n": n}, np.full(n, 1.1), genwood_optimum(n))
    except ValueError as exc:
        if isinstance(exc, ArgumentError):
            raise
        raise ArgumentError(f"bad parameter in problem id {problem_id!r}: {exc}") from None
    raise ArgumentError(f"unknown problem id {problem_id!r}")
