"""Adaptive ODE integrators: Dormand-Prince 5(4) and an L-stable TR-BDF2.

Both integrators share the error test ``|err_i| <= atol + rtol * max(|y_i|, |y_new_i|)``
(max norm) and call ``observer(t, y)`` after every accepted step; a truthy return value
ends the integration early. An optional ``project(y)`` is applied to each accepted state;
a step whose projection moves the state by more than the error tolerance is rejected
and retried shorter.

``on_step(t, y)`` is called at the initial state and at every accepted state before the
right-hand side is evaluated there. Right-hand sides with state-dependent switching use
it to fix their mode for the coming step, so each step integrates a smooth field; it
returns True when the mode changed.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .core import ArgumentError, BoxDynError, EvaluationError, IntegratorKind

Rhs = Callable[[float, np.ndarray], np.ndarray]
Observer = Callable[[float, np.ndarray], Optional[bool]]
StepHook = Callable[[float, np.ndarray], bool]

log = logging.getLogger(__name__)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class IntegratorError(BoxDynError):
    """Integration failed; ``result`` holds the state reached so far."""

    def __init__(self, message: str, result: "ODEResult | None" = None):
        super().__init__(message)
        self.result = result


class BudgetError(IntegratorError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    kind: IntegratorKind = IntegratorKind.EXPLICIT_RK45
    rel_tol: float = 1e-3
    abs_tol: float = 1e-6
    initial_step: Optional[float] = None
    max_step: Optional[float] = None
    max_steps: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "kind", IntegratorKind(self.kind))
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ArgumentError("integrator tolerances must be > 0")
        if self.max_steps < 1:
            raise ArgumentError("max_steps must be >= 1")


@dataclass(frozen=True)
class StepOutcome:
    accepted: bool
    error_estimate: float
    next_step: float


class Status(str, enum.Enum):
    COMPLETED = "completed"
    STOPPED = "stopped"


@dataclass
class ODEResult:
    t: float
    y: np.ndarray
    status: Status = Status.COMPLETED
    rhs_evals: int = 0
    jac_evals: int = 0
    newton_iters: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0
    newton_failures: int = 0


class _Counted:
    def __init__(self, rhs: Rhs, result: ODEResult):
        self.rhs = rhs
        self.result = result

    def __call__(self, t, y):
        self.result.rhs_evals += 1
        return np.asarray(self.rhs(t, y), dtype=float)


def _check_span(theta0, span):
    y0 = np.array(theta0, dtype=float)
    if y0.ndim != 1 or not np.all(np.isfinite(y0)):
        raise ArgumentError("initial state must be a finite vector")
    t0, t1 = float(span[0]), float(span[1])
    if not t1 > t0:
        raise ArgumentError("integration span must satisfy t1 > t0")
    return y0, t0, t1


def _error_norm(err, y, y_new, cfg: IntegratorConfig) -> float:
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.max(np.abs(err) / scale, initial=0.0))


def _judge(h: float, err: float, order: int, failures: int = 0) -> StepOutcome:
    """Accept iff ``err <= 1`` and propose the next step size.

    ``failures`` counts consecutive rejections before this attempt. After a rejection
    the step may not grow; after two or more in a row (typical near a discontinuity,
    where the error shrinks only linearly) it is at least halved.
    """
    accepted = err <= 1.0
    if err == 0.0:
        factor = MAX_FACTOR
    else:
        factor = min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err ** (-1.0 / order)))
    if not accepted or failures:
        factor = min(factor, 1.0)
    if not accepted and failures >= 1:
        factor = min(factor, 0.5)
    return StepOutcome(accepted, err, h * factor)


def _overshoot(project, y, y_new, cfg: IntegratorConfig):
    """Projected ``y_new`` and, if the projection moved it beyond tolerance, a step factor.

    The factor is the smallest fraction of the step that each clamped component covered
    before leaving the box (at least 0.1), so the retried step ends near the crossing.
    """
    y_proj = project(y_new)
    if _error_norm(y_proj - y_new, y, y_proj, cfg) <= 1.0:
        return y_proj, None
    moved = y_new - y
    hit = (y_proj != y_new) & (moved != 0.0)
    frac = np.min((y_proj[hit] - y[hit]) / moved[hit], initial=1.0)
    return y_proj, float(min(0.9, max(0.1, frac)))


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def integrate_explicit(
    rhs: Rhs,
    theta0,
    span,
    cfg: IntegratorConfig = IntegratorConfig(),
    observer: Observer | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    on_step: StepHook | None = None,
) -> ODEResult:
    """Dormand-Prince 5(4) with local extrapolation and the FSAL stage reused."""
    y, t, t1 = _check_span(theta0, span)
    res = ODEResult(t=t, y=y)
    f = _Counted(rhs, res)
    length = t1 - t
    hmax = cfg.max_step if cfg.max_step is not None else length
    k = np.empty((7, y.shape[0]))
    if on_step is not None:
        on_step(t, y)
    k[0] = f(t, y)
    h = min(cfg.initial_step if cfg.initial_step is not None else 1e-2 * length, hmax)
    steps = 0
    fails = 0
    while t < t1:
        if steps >= cfg.max_steps:
            res.t, res.y = t, y
            raise BudgetError(f"exceeded {cfg.max_steps} steps at t={t:.6g}", res)
        if h < 1e-14 * length:
            res.t, res.y = t, y
            raise IntegratorError(f"step size underflow at t={t:.6g}", res)
        last = t + h >= t1 - 1e-12 * length
        if last:
            h = t1 - t
        try:
            for s in range(1, 7):
                k[s] = f(t + _C[s] * h, y + h * np.dot(_A[s], k[:s]))
        except EvaluationError:
            # a trial stage left the region where the model can be evaluated
            steps += 1
            res.rejected_steps += 1
            fails += 1
            h *= 0.5
            continue
        y_new = y + h * np.dot(_B, k)
        err = _error_norm(h * np.dot(_E, k), y, y_new, cfg)
        steps += 1
        outcome = _judge(h, err, 5, fails)
        shrink = None
        if outcome.accepted and project is not None:
            y_proj, shrink = _overshoot(project, y, y_new, cfg)
        if shrink is not None:
            # the step crossed a bound by more than the tolerance
            res.rejected_steps += 1
            h *= shrink
            fails += 1
            continue
        if outcome.accepted:
            t = t1 if last else t + h
            res.accepted_steps += 1
            k0 = k[6]
            if project is not None and not np.array_equal(y_proj, y_new):
                y_new = y_proj
                k0 = None
            if on_step is not None and on_step(t, y_new):
                k0 = None
            y = y_new
            k[0] = f(t, y) if k0 is None else k0
            h = min(outcome.next_step, hmax)
            fails = 0
            if observer is not None and observer(t, y):
                res.status = Status.STOPPED
                break
        else:
            res.rejected_steps += 1
            h = outcome.next_step
            fails += 1
    res.t, res.y = t, y
    return res


# TR-BDF2 as a stiffly accurate ESDIRK (Hosea & Shampine form)
_GAMMA = 2.0 - np.sqrt(2.0)
_D = _GAMMA / 2.0
_W = np.sqrt(2.0) / 4.0
_ERR = np.array([(4.0 * _W - 1.0) / 3.0, -1.0 / 3.0, 2.0 * _D / 3.0])
_NEWTON_MAXIT = 6
_NEWTON_KAPPA = 0.01


def fd_jacobian(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, fy: np.ndarray) -> np.ndarray:
    """Forward differences with step ``sqrt(eps) * (1 + |y_i|)``."""
    n = y.shape[0]
    jac = np.empty((n, n))
    base = np.sqrt(np.finfo(float).eps)
    for i in range(n):
        yp = y.copy()
        yp[i] += base * (1.0 + abs(y[i]))
        jac[:, i] = (f(t, yp) - fy) / (yp[i] - y[i])
    return jac


def integrate_stiff(
    rhs: Rhs,
    theta0,
    span,
    cfg: IntegratorConfig = IntegratorConfig(kind=IntegratorKind.STIFF_IMPLICIT),
    observer: Observer | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    on_step: StepHook | None = None,
) -> ODEResult:
    """Adaptive TR-BDF2 (order 2, L-stable) with simplified Newton on each implicit stage.

    The finite-difference Jacobian is kept across steps and only refreshed when a
    Newton solve fails to converge with a stale one. The embedded error estimate is
    filtered through ``(I - h d J)^{-1}`` so stiff components do not inflate it.
    """
    y, t, t1 = _check_span(theta0, span)
    res = ODEResult(t=t, y=y)
    f = _Counted(rhs, res)
    n = y.shape[0]
    length = t1 - t
    hmax = cfg.max_step if cfg.max_step is not None else length
    if on_step is not None:
        on_step(t, y)
    f0 = f(t, y)
    h = min(cfg.initial_step if cfg.initial_step is not None else 1e-2 * length, hmax)
    jac = None
    jac_fresh = False
    lu = None
    lu_h = None
    steps = 0
    fails = 0
    eye = np.eye(n)

    def newton(tz, z, psi, hd):
        # solves z - hd * f(tz, z) = psi
        prev = None
        for it in range(_NEWTON_MAXIT):
            res.newton_iters += 1
            try:
                resid = z - hd * f(tz, z) - psi
            except EvaluationError:
                return None
            dz = lu_solve(lu, -resid)
            z = z + dz
            scale = cfg.abs_tol + cfg.rel_tol * np.abs(z)
            norm = float(np.max(np.abs(dz) / scale, initial=0.0))
            if not np.isfinite(norm):
                return None
            if norm <= _NEWTON_KAPPA:
                return z
            if prev is not None:
                rate = norm / prev
                if rate >= 0.9:
                    return None
                if rate / (1.0 - rate) * norm <= _NEWTON_KAPPA:
                    return z
                # cannot reach the tolerance in the iterations left at this rate
                if rate ** (_NEWTON_MAXIT - 1 - it) / (1.0 - rate) * norm > _NEWTON_KAPPA:
                    return None
            prev = norm
        return None

    while t < t1:
        if steps >= cfg.max_steps:
            res.t, res.y = t, y
            raise BudgetError(f"exceeded {cfg.max_steps} steps at t={t:.6g}", res)
        if h < 1e-14 * length:
            res.t, res.y = t, y
            raise IntegratorError(f"step size underflow at t={t:.6g}", res)
        last = t + h >= t1 - 1e-12 * length
        if last:
            h = t1 - t
        if jac is None:
            jac = fd_jacobian(f, t, y, f0)
            res.jac_evals += 1
            jac_fresh = True
            lu_h = None
        hd = h * _D
        if lu_h != h:
            lu = lu_factor(eye - hd * jac)
            lu_h = h
        steps += 1

        psi2 = y + hd * f0
        # a diverging Newton trial is rejected below; its overflows are expected
        with np.errstate(over="ignore", invalid="ignore"):
            z2 = newton(t + _GAMMA * h, y + _GAMMA * h * f0, psi2, hd)
            z3 = None
            if z2 is not None:
                f2 = (z2 - psi2) / hd
                psi3 = y + h * _W * (f0 + f2)
                z3 = newton(t + h, psi3 + hd * f2, psi3, hd)
        if z3 is None:
            res.rejected_steps += 1
            res.newton_failures += 1
            log.debug("t=%.6g h=%.3g: Newton failed (fresh Jacobian: %s)", t, h, jac_fresh)
            if not jac_fresh and fails > 0:
                jac = None
            else:
                h *= 0.5
            fails += 1
            continue

        f3 = (z3 - psi3) / hd
        est = lu_solve(lu, h * (_ERR[0] * f0 + _ERR[1] * f2 + _ERR[2] * f3))
        err = _error_norm(est, y, z3, cfg)
        outcome = _judge(h, err, 3, fails)
        y_new, shrink = z3, None
        if outcome.accepted and project is not None:
            y_new, shrink = _overshoot(project, y, z3, cfg)
        if shrink is not None:
            res.rejected_steps += 1
            log.debug("t=%.6g h=%.3g: step overshoots a bound", t, h)
            h *= shrink
            fails += 1
            continue
        if outcome.accepted:
            t = t1 if last else t + h
            res.accepted_steps += 1
            y = y_new
            if on_step is not None and on_step(t, y):
                jac = None
            f0 = f(t, y)
            jac_fresh = False
            h = min(outcome.next_step, hmax)
            fails = 0
            if observer is not None and observer(t, y):
                res.status = Status.STOPPED
                break
        else:
            res.rejected_steps += 1
            log.debug("t=%.6g h=%.3g: error test failed (err=%.3g)", t, h, err)
            h = outcome.next_step
            fails += 1
    res.t, res.y = t, y
    return res


def integrate(rhs: Rhs, theta0, span, cfg: IntegratorConfig, observer=None, project=None, on_step=None) -> ODEResult:
    if cfg.kind is IntegratorKind.STIFF_IMPLICIT:
        return integrate_stiff(rhs, theta0, span, cfg, observer, project, on_step)
    return integrate_explicit(rhs, theta0, span, cfg, observer, project, on_step)
