"""Projected gradient descent with Armijo backtracking: the iterative counterpart of the limited flow."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    ArgumentError,
    BoxProblem,
    SolveError,
    SolveReport,
    SolveStats,
    TrajectorySample,
    project_to_box,
)
from .kkt import kkt_report, projected_residual


@dataclass(frozen=True)
class PgdOptions:
    max_iters: int = 20_000
    armijo_c: float = 1e-4
    backtrack_ratio: float = 0.5
    initial_step: float = 1.0
    stationarity_tol: float = 1e-8
    active_tol: float = 1e-10
    min_step: float = 1e-16

    def __post_init__(self):
        if not 0 < self.armijo_c < 1 or not 0 < self.backtrack_ratio < 1:
            raise ArgumentError("armijo_c and backtrack_ratio must lie in (0, 1)")
        if self.max_iters < 1 or not self.initial_step > 0 or not self.stationarity_tol > 0:
            raise ArgumentError("max_iters, initial_step and stationarity_tol must be positive")


def projected_gradient_descent(problem: BoxProblem, theta0, opts: PgdOptions = PgdOptions()) -> SolveReport:
    """Iterate ``theta <- P(theta - alpha * grad)`` with Armijo backtracking along the projection arc.

    Each iteration starts its line search at twice the last accepted step (capped at
    ``initial_step``). Raises :class:`SolveError` with a partial report if the step
    underflows ``min_step``.
    """
    start = time.perf_counter()
    stats = SolveStats()
    theta = project_to_box(np.asarray(theta0, dtype=float), problem)
    f = problem.f(theta)
    g = problem.grad(theta)
    stats.f_evals += 1
    stats.grad_evals += 1

    def residual(th, gr):
        return float(np.max(np.abs(projected_residual(th, gr, problem, opts.active_tol)), initial=0.0))

    res = residual(theta, g)
    samples = [TrajectorySample(0.0, theta, f, res)]
    alpha = opts.initial_step
    message = ""
    for it in range(1, opts.max_iters + 1):
        if res < opts.stationarity_tol:
            break
        alpha = min(opts.initial_step, 2.0 * alpha)
        while True:
            trial = project_to_box(theta - alpha * g, problem)
            f_trial = problem.f(trial)
            stats.f_evals += 1
            if f_trial <= f + opts.armijo_c * float(np.dot(g, trial - theta)) and f_trial < f:
                break
            stats.rejected_steps += 1
            alpha *= opts.backtrack_ratio
            if alpha < opts.min_step:
                message = f"line search stalled at iteration {it}"
                break
        if message:
            break
        theta, f = trial, f_trial
        g = problem.grad(theta)
        stats.grad_evals += 1
        stats.accepted_steps += 1
        res = residual(theta, g)
        samples.append(TrajectorySample(float(it), theta, f, res))

    stats.rhs_evals = stats.grad_evals
    stats.wall_time = time.perf_counter() - start
    report = SolveReport(
        final_theta=theta,
        final_f=f,
        kkt=kkt_report(theta, problem, grad=g),
        samples=samples,
        stats=stats,
        converged=res < opts.stationarity_tol,
        method="pgd",
        problem=problem.name,
        message=message,
    )
    if message:
        raise SolveError(message, report)
    return report
