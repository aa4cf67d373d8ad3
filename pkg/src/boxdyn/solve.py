"""Turn a box-constrained problem into an initial-value problem and integrate it to stationarity."""

from __future__ import annotations

import logging
import time

import numpy as np

from .core import (
    ArgumentError,
    BoxProblem,
    GainMatrix,
    Method,
    SolveError,
    SolveOptions,
    SolveReport,
    SolveStats,
    TrajectorySample,
    check_feasible,
    project_to_box,
)
from .flow import limiter_activity, rhs_general, rhs_limited
from .kkt import kkt_report, projected_residual
from .ode import IntegratorConfig, IntegratorError, integrate

log = logging.getLogger(__name__)


def make_rhs(problem: BoxProblem, K: GainMatrix, opts: SolveOptions, stats: SolveStats):
    """Right-hand side ``rhs(tau, theta)`` for the selected dynamic method, plus its step hook.

    The hook is None unless the limiter activity is frozen per step, in which case it
    re-evaluates the activity masks at each accepted state.
    """
    if K.n != problem.n:
        raise ArgumentError(f"gain dimension {K.n} does not match problem dimension {problem.n}")
    if opts.method is Method.UNCONSTRAINED_LIKE:
        frozen: list = [None]

        def rhs(tau, theta):
            stats.grad_evals += 1
            return rhs_limited(
                theta,
                problem.grad(theta),
                K,
                problem,
                opts.limiter,
                opts.active_tol,
                allow_dense=opts.allow_dense_limiter,
                activity=frozen[0],
            )

        def on_step(tau, theta) -> bool:
            stats.grad_evals += 1
            new = limiter_activity(theta, problem.grad(theta), K, problem, opts.active_tol)
            old, frozen[0] = frozen[0], new
            return old is None or not (np.array_equal(old[0], new[0]) and np.array_equal(old[1], new[1]))

        return rhs, (on_step if opts.freeze_activity else None)
    if opts.method is Method.GENERAL_DYNAMIC:

        def rhs(tau, theta):
            stats.grad_evals += 1
            stats.qp_solves += 1
            u, _ = rhs_general(theta, problem.grad(theta), K, problem, opts.active_tol, strict=False)
            return u

        return rhs, None
    raise ArgumentError(f"method {opts.method.value!r} is not a dynamic method")


def solve_to_stationarity(problem: BoxProblem, K: GainMatrix, opts: SolveOptions, theta0) -> SolveReport:
    """Integrate the chosen flow over ``[0, opts.horizon]``.

    Stops early once the projected KKT residual at an accepted step drops below
    ``opts.stationarity_tol`` (unless ``opts.early_stop`` is off). Samples and the final
    point are reported projected onto the box.
    """
    if opts.method is Method.PROJECTED_GRADIENT:
        from .baselines import PgdOptions, projected_gradient_descent

        return projected_gradient_descent(
            problem,
            theta0,
            PgdOptions(stationarity_tol=opts.stationarity_tol, active_tol=opts.active_tol),
        )

    start = time.perf_counter()
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (problem.n,):
        raise ArgumentError(f"initial point has shape {theta0.shape}, expected ({problem.n},)")
    feasible, worst = check_feasible(theta0, problem, opts.active_tol)
    init_clamped = not feasible
    if init_clamped:
        log.warning("initial point outside the box by %.3g; clamping", worst)
    theta0 = project_to_box(theta0, problem)

    stats = SolveStats()
    rhs, on_step = make_rhs(problem, K, opts, stats)
    samples: list[TrajectorySample] = []
    accepted = 0

    def sample(tau, theta) -> TrajectorySample:
        th = project_to_box(theta, problem)
        g = problem.grad(th)
        stats.grad_evals += 1
        stats.f_evals += 1
        r = projected_residual(th, g, problem, opts.active_tol)
        return TrajectorySample(float(tau), th, problem.f(th), float(np.max(np.abs(r), initial=0.0)))

    def observer(tau, theta):
        nonlocal accepted
        accepted += 1
        keep = accepted % opts.sample_stride == 0
        if not (keep or opts.early_stop):
            return False
        s = sample(tau, theta)
        stop = opts.early_stop and s.residual < opts.stationarity_tol
        if keep or stop:
            samples.append(s)
        return stop

    # Exact clamping and the general method keep the state in the box; the softened
    # limiter pulls itself back, except that with frozen activity a bound crossed inside
    # a step goes unnoticed until the step ends, so the overshoot is clamped instead.
    clamp = (not opts.limiter.softened) or opts.method is Method.GENERAL_DYNAMIC or bool(on_step)
    project = (lambda y: project_to_box(y, problem)) if clamp else None
    cfg = IntegratorConfig(
        kind=opts.integrator,
        rel_tol=opts.rel_tol,
        abs_tol=opts.abs_tol,
        initial_step=opts.initial_step,
        max_step=opts.max_step,
        max_steps=opts.max_steps,
    )
    samples.append(sample(0.0, theta0))
    message = ""
    try:
        result = integrate(rhs, theta0, (0.0, opts.horizon), cfg, observer, project, on_step)
        final_tau, final_state = result.t, result.y
    except IntegratorError as exc:
        result = exc.result
        final_tau, final_state = result.t, result.y
        message = str(exc)
    stats.rhs_evals = result.rhs_evals
    stats.jac_evals = result.jac_evals
    stats.newton_iters = result.newton_iters
    stats.accepted_steps = result.accepted_steps
    stats.rejected_steps = result.rejected_steps

    if samples[-1].tau < final_tau:
        samples.append(sample(final_tau, final_state))
    final = samples[-1].theta
    report = kkt_report(final, problem, opts.kkt_active_tol, opts.degeneracy_tol)
    stats.wall_time = time.perf_counter() - start
    out = SolveReport(
        final_theta=final,
        final_f=samples[-1].f,
        kkt=report,
        samples=samples,
        stats=stats,
        converged=report.residual_norm < opts.stationarity_tol,
        method=opts.method.value,
        problem=problem.name,
        init_clamped=init_clamped,
        message=message,
    )
    if message:
        raise SolveError(message, out)
    return out
