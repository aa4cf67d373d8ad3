"""First-order optimality diagnostics for box-constrained points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activeset_qp import activated_set
from .core import ActiveBoundSet, BoxProblem


def projected_residual(theta, grad, problem: BoxProblem, active_tol: float = 1e-10, strict: bool = True) -> np.ndarray:
    """Componentwise KKT violation.

    ``grad_i`` on interior components, ``min(grad_i, 0)`` on the lower bound and
    ``max(grad_i, 0)`` on the upper bound. Zero exactly at KKT points.
    """
    active = activated_set(theta, problem, active_tol, strict=strict)
    grad = np.asarray(grad, dtype=float)
    r = grad.copy()
    lo = sorted(active.lower)
    up = sorted(active.upper)
    r[lo] = np.minimum(grad[lo], 0.0)
    r[up] = np.maximum(grad[up], 0.0)
    return r


def recover_multipliers(theta, grad, problem: BoxProblem, active_tol: float = 1e-10, strict: bool = True) -> np.ndarray:
    """Bound multipliers in the layout ``[upper rows (n); lower rows (n)]``.

    Upper-active components get ``-grad_i``, lower-active ones ``+grad_i``, the rest zero.
    """
    active = activated_set(theta, problem, active_tol, strict=strict)
    grad = np.asarray(grad, dtype=float)
    n = problem.n
    pi = np.zeros(2 * n)
    up = sorted(active.upper)
    lo = sorted(active.lower)
    pi[up] = -grad[up]
    pi[[n + i for i in lo]] = grad[lo]
    return pi


@dataclass(frozen=True)
class KKTReport:
    theta: np.ndarray
    residual: np.ndarray
    residual_norm: float
    multipliers: np.ndarray
    active: ActiveBoundSet
    degenerate_indices: frozenset
    negative_indices: frozenset
    strict_complementarity: bool

    @property
    def is_kkt_point(self) -> bool:
        """No active multiplier is negative beyond the degeneracy tolerance."""
        return not self.negative_indices

    def to_dict(self) -> dict:
        n = self.theta.shape[0]
        return {
            "residual": self.residual.tolist(),
            "residual_norm": float(self.residual_norm),
            "multipliers": {
                "upper": self.multipliers[:n].tolist(),
                "lower": self.multipliers[n:].tolist(),
            },
            "active": self.active.to_dict(),
            "degenerate_indices": sorted(self.degenerate_indices),
            "negative_multiplier_indices": sorted(self.negative_indices),
            "strict_complementarity": bool(self.strict_complementarity),
            "kkt_point": self.is_kkt_point,
        }


def kkt_report(
    theta,
    problem: BoxProblem,
    active_tol: float = 1e-10,
    degeneracy_tol: float = 1e-6,
    grad=None,
    strict: bool = True,
) -> KKTReport:
    theta = np.asarray(theta, dtype=float)
    if grad is None:
        grad = problem.grad(theta)
    grad = np.asarray(grad, dtype=float)
    active = activated_set(theta, problem, active_tol, strict=strict)
    r = projected_residual(theta, grad, problem, active_tol, strict=strict)
    pi = recover_multipliers(theta, grad, problem, active_tol, strict=strict)
    n = problem.n
    active_mult = {i: pi[i] for i in active.upper}
    active_mult.update({i: pi[n + i] for i in active.lower})
    degenerate = frozenset(i for i, p in active_mult.items() if abs(p) < degeneracy_tol)
    negative = frozenset(i for i, p in active_mult.items() if p < -degeneracy_tol)
    return KKTReport(
        theta=theta.copy(),
        residual=r,
        residual_norm=float(np.max(np.abs(r), initial=0.0)),
        multipliers=pi,
        active=active,
        degenerate_indices=degenerate,
        negative_indices=negative,
        strict_complementarity=not degenerate,
    )
