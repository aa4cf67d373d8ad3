"""Active-set solution of the feasibility-preserving QP over the control ``u``.

The QP is::

    min  1/2 f^T u + 1/4 u^T K^{-1} u
    s.t. u_i <= 0   for i on its upper bound
         u_i >= 0   for i on its lower bound

Its solution ``u = -K (f + h^T pi)`` pins the optimal-active rows ``h`` and keeps the
flow inside the box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    ActiveBoundSet,
    ArgumentError,
    BoxDynError,
    BoxProblem,
    FeasibilityError,
    GainMatrix,
    NonTerminationError,
    SelectionMatrixView,
)


def activated_set(theta, problem: BoxProblem, active_tol: float = 1e-10, strict: bool = True) -> ActiveBoundSet:
    """Components on (within ``active_tol`` of) a finite bound.

    With ``strict=False`` points beyond a bound count as on it instead of raising; the
    integrators need this because intermediate stages may leave the box.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.n,):
        raise ArgumentError(f"theta has shape {theta.shape}, expected ({problem.n},)")
    if strict:
        over = np.maximum(theta - problem.upper, problem.lower - theta)
        if np.any(over > active_tol):
            i = int(np.argmax(over))
            raise FeasibilityError(f"component {i} violates its bound by {over[i]:.3e}")
    lower = np.flatnonzero(theta <= problem.lower + active_tol)
    upper = np.flatnonzero(theta >= problem.upper - active_tol)
    return ActiveBoundSet(lower=lower.tolist(), upper=upper.tolist())


def _rows(working) -> SelectionMatrixView:
    if isinstance(working, ActiveBoundSet):
        return working.rows()
    if isinstance(working, SelectionMatrixView):
        return working
    return SelectionMatrixView(tuple(working))


def equality_multipliers(grad, K: GainMatrix, working) -> np.ndarray:
    """Multipliers ``-(h K h^T)^{-1} h K f`` for the rows of ``working`` (in row order)."""
    rows = _rows(working)
    grad = np.asarray(grad, dtype=float)
    if not rows:
        return np.zeros(0)
    idx, sgn = rows.indices(), rows.signs()
    if K.diag is not None:
        # h K h^T is diag(K_ii); the rows decouple
        return -sgn * grad[idx]
    kk = K.matrix[np.ix_(idx, idx)] * np.outer(sgn, sgn)
    kf = sgn * (K.matrix @ grad)[idx]
    try:
        return -np.linalg.solve(kk, kf)
    except np.linalg.LinAlgError:
        raise BoxDynError("h K h^T is singular; the working set is not full row rank") from None


def control_for(grad, K: GainMatrix, rows: SelectionMatrixView, pi: np.ndarray) -> np.ndarray:
    """``u = -K (f + h^T pi)``."""
    v = np.asarray(grad, dtype=float).copy()
    if len(rows):
        np.add.at(v, rows.indices(), rows.signs() * pi)
    u = -K.apply(v)
    if len(rows):
        # exact zeros on the pinned rows; the product above leaves roundoff for dense K
        u[rows.indices()] = 0.0
    return u


def qp_objective(grad, K: GainMatrix, u) -> float:
    """J_t3 = J_t1 / 2 + J_t2 / 2 with J_t1 = f^T u and J_t2 = u^T K^{-1} u / 2."""
    u = np.asarray(u, dtype=float)
    jt1 = float(np.dot(grad, u))
    jt2 = 0.5 * float(np.dot(u, K.solve(u)))
    return 0.5 * jt1 + 0.5 * jt2


def embed_multipliers(n: int, rows: SelectionMatrixView, pi) -> np.ndarray:
    """Scatter row multipliers into the 2n layout ``[upper rows; lower rows]``."""
    full = np.zeros(2 * n)
    for (i, s), p in zip(rows.rows, pi):
        full[i if s > 0 else n + i] = p
    return full


@dataclass(frozen=True)
class FpdopProblem:
    grad: np.ndarray
    K: GainMatrix
    candidate: ActiveBoundSet
    # optional warm start, e.g. the previous step's optimal-active set
    hint: Optional[ActiveBoundSet] = None


@dataclass(frozen=True)
class FpdopSolution:
    u: np.ndarray
    i_p: ActiveBoundSet
    pi: np.ndarray
    pi_full: np.ndarray
    iterations: int

    @property
    def n_ip(self) -> int:
        return len(self.i_p)


def solve_fpdop(fp: FpdopProblem) -> FpdopSolution:
    grad = np.asarray(fp.grad, dtype=float)
    n = grad.shape[0]
    if fp.K.n != n:
        raise ArgumentError("gain and gradient dimensions differ")
    candidate = set(fp.candidate.rows().rows)
    if fp.hint is not None:
        working = candidate & set(fp.hint.rows().rows)
    else:
        working = set(candidate)

    scale = max(1.0, float(np.max(np.abs(fp.K.apply(grad)), initial=0.0)))
    viol_tol = 1e-13 * scale
    max_cycles = 2 * len(candidate) + 2
    seen = set()
    for it in range(max_cycles + 1):
        key = frozenset(working)
        if key in seen:
            raise NonTerminationError(f"working set repeated after {it} cycles")
        seen.add(key)
        rows = SelectionMatrixView(tuple(sorted(working)))
        pi = equality_multipliers(grad, fp.K, rows)
        u = control_for(grad, fp.K, rows, pi)
        if len(pi) and pi.min() < 0:
            working.discard(rows.rows[int(np.argmin(pi))])
            continue
        best, best_v = None, viol_tol
        for row in candidate - working:
            i, s = row
            if s * u[i] > best_v:
                best, best_v = row, s * u[i]
        if best is not None:
            working.add(best)
            continue
        return FpdopSolution(
            u=u,
            i_p=ActiveBoundSet.from_rows(rows.rows),
            pi=pi,
            pi_full=embed_multipliers(n, rows, pi),
            iterations=it + 1,
        )
    raise NonTerminationError(f"no optimal working set within {max_cycles} cycles")
