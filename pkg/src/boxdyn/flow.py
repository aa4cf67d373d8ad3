"""Right-hand sides of the dynamic optimization equation ``d theta / d tau = u``."""

from __future__ import annotations

import numpy as np

from .activeset_qp import FpdopProblem, FpdopSolution, activated_set, solve_fpdop
from .core import (
    ActiveBoundSet,
    ArgumentError,
    BoxProblem,
    GainMatrix,
    LimiterMode,
    MethodContractError,
    SelectionMatrixView,
)


def _check(grad, K: GainMatrix) -> np.ndarray:
    grad = np.asarray(grad, dtype=float)
    if grad.ndim != 1 or grad.shape[0] != K.n:
        raise ArgumentError(f"gradient shape {grad.shape} does not match gain dimension {K.n}")
    return grad


def rhs_unconstrained(theta, grad, K: GainMatrix) -> np.ndarray:
    """Plain gradient flow ``u = -K grad``."""
    grad = _check(grad, K)
    if np.shape(theta) != grad.shape:
        raise ArgumentError("theta and gradient dimensions differ")
    return -K.apply(grad)


def limiter_activity(theta, grad, K: GainMatrix, problem: BoxProblem, active_tol: float = 1e-10):
    """Masks ``(at_lower, at_upper)`` of components on (or beyond) a bound and pushing outward."""
    x = -K.apply(_check(grad, K))
    theta = np.asarray(theta, dtype=float)
    at_upper = (theta >= problem.upper - active_tol) & (x >= 0)
    at_lower = (theta <= problem.lower + active_tol) & (x <= 0)
    return at_lower, at_upper


def rhs_limited(
    theta,
    grad,
    K: GainMatrix,
    problem: BoxProblem,
    mode: LimiterMode = LimiterMode(),
    active_tol: float = 1e-10,
    allow_dense: bool = False,
    activity=None,
) -> np.ndarray:
    """Gradient flow passed through a limited (anti-windup) integrator.

    The incoming derivative ``x = -K grad`` is frozen on components sitting on a bound
    and pushing outward. In softened mode those components instead relax back to the
    bound at rates ``k_upper``/``k_lower``. Points beyond a bound count as on it.

    The descent and optimality guarantees only hold for a diagonal ``K``; a dense gain
    raises unless ``allow_dense`` is set. ``activity`` overrides the bound test with
    precomputed ``(at_lower, at_upper)`` masks, e.g. from :func:`limiter_activity`.
    """
    if not K.is_diagonal and not allow_dense:
        raise MethodContractError("the limited-integrator flow requires a diagonal gain")
    grad = _check(grad, K)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != grad.shape or problem.n != grad.shape[0]:
        raise ArgumentError("theta, gradient and problem dimensions differ")
    x = -K.apply(grad)
    if activity is None:
        at_upper = (theta >= problem.upper - active_tol) & (x >= 0)
        at_lower = (theta <= problem.lower + active_tol) & (x <= 0)
    else:
        at_lower, at_upper = activity
    u = x.copy()
    if mode.softened:
        u[at_upper] = -mode.k_upper * (theta[at_upper] - problem.upper[at_upper])
        u[at_lower] = -mode.k_lower * (theta[at_lower] - problem.lower[at_lower])
    else:
        u[at_upper | at_lower] = 0.0
    return u


def _rows_of(active) -> SelectionMatrixView:
    if isinstance(active, ActiveBoundSet):
        return active.rows()
    if isinstance(active, SelectionMatrixView):
        return active
    return SelectionMatrixView(tuple(active))


def rhs_projected(theta, grad, K: GainMatrix, active) -> np.ndarray:
    """``u = -(I - h^+ h) K grad``; with signed unit rows ``h^+ h`` just selects the pinned components."""
    grad = _check(grad, K)
    rows = _rows_of(active)
    u = -K.apply(grad)
    u[rows.projector_mask(grad.shape[0])] = 0.0
    return u


def rhs_general(
    theta,
    grad,
    K: GainMatrix,
    problem: BoxProblem,
    active_tol: float = 1e-10,
    strict: bool = True,
    hint: ActiveBoundSet | None = None,
) -> tuple[np.ndarray, FpdopSolution]:
    """General dynamic method: solve the QP for the optimal-active set, then ``u = -K(grad + g^T pi)``."""
    grad = _check(grad, K)
    candidate = activated_set(theta, problem, active_tol, strict=strict)
    sol = solve_fpdop(FpdopProblem(grad, K, candidate, hint))
    return sol.u, sol


def descent_rate(grad, K: GainMatrix, active) -> float:
    """``df/dtau = -grad^T (I - h^+ h) K grad`` along the projected flow."""
    grad = _check(grad, K)
    rows = _rows_of(active)
    free = ~rows.projector_mask(grad.shape[0])
    return float(-np.dot(grad[free], K.apply(grad)[free]))
