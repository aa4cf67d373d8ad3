"""Shared domain types for box-constrained problems and the dynamic solvers."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np


class BoxDynError(Exception):
    """Base class for all package errors."""


class ArgumentError(BoxDynError, ValueError):
    """Malformed input: bad shapes, invalid bounds, invalid gains."""


class FeasibilityError(BoxDynError):
    """A point lies outside the box by more than the allowed tolerance."""


class MethodContractError(BoxDynError):
    """A method was used outside the conditions its convergence theory needs."""


class NonTerminationError(BoxDynError):
    """An iterative sub-solver revisited a working set or ran out of cycles."""


class EvaluationError(BoxDynError):
    """The objective or gradient could not be evaluated at the requested point."""


class SolveError(BoxDynError):
    """A solve failed; ``report`` carries whatever was computed before the failure."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


def _as_vector(x, n: int | None = None, name: str = "theta") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ArgumentError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ArgumentError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


@dataclass(frozen=True, eq=False)
class BoxProblem:
    """Minimize ``objective(theta)`` subject to ``lower <= theta <= upper``.

    Infinite entries in ``lower``/``upper`` mark unbounded sides.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    name: str = "problem"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ArgumentError(f"n must be a positive integer, got {self.n!r}")
        lower = _as_vector(self.lower, self.n, "lower").copy()
        upper = _as_vector(self.upper, self.n, "upper").copy()
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ArgumentError("bounds must not contain NaN")
        if np.any(lower == np.inf) or np.any(upper == -np.inf):
            raise ArgumentError("lower bounds cannot be +inf and upper bounds cannot be -inf")
        if not np.all(lower < upper):
            bad = np.flatnonzero(~(lower < upper)).tolist()
            raise ArgumentError(f"lower must be strictly below upper; violated at {bad}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def f(self, theta: np.ndarray) -> float:
        return float(self.objective(theta))

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(self.gradient(theta), dtype=float)


@dataclass(frozen=True, eq=False)
class GainMatrix:
    """Positive-definite gain. Build with :meth:`diagonal` or :meth:`dense`."""

    diag: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None

    @classmethod
    def diagonal(cls, d) -> "GainMatrix":
        d = _as_vector(d, name="gain diagonal").copy()
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ArgumentError("diagonal gain entries must be finite and strictly positive")
        d.flags.writeable = False
        return cls(diag=d)

    @classmethod
    def identity(cls, n: int, scale: float = 1.0) -> "GainMatrix":
        return cls.diagonal(np.full(n, float(scale)))

    @classmethod
    def dense(cls, m) -> "GainMatrix":
        m = np.array(m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ArgumentError(f"dense gain must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ArgumentError("dense gain must be finite")
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-12:
            raise ArgumentError("dense gain must be symmetric")
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise ArgumentError("dense gain must be positive definite") from None
        m.flags.writeable = False
        return cls(matrix=m)

    @property
    def n(self) -> int:
        return self.diag.shape[0] if self.diag is not None else self.matrix.shape[0]

    @property
    def is_diagonal(self) -> bool:
        if self.diag is not None:
            return True
        off = self.matrix - np.diag(np.diag(self.matrix))
        return not np.any(off)

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.diag) if self.diag is not None else self.matrix.copy()

    def diagonal_entries(self) -> np.ndarray:
        return self.diag if self.diag is not None else np.diag(self.matrix).copy()

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = _as_vector(v, self.n, "vector")
        return self.diag * v if self.diag is not None else self.matrix @ v

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Return ``K^{-1} v``."""
        v = _as_vector(v, self.n, "vector")
        return v / self.diag if self.diag is not None else np.linalg.solve(self.matrix, v)

    def describe(self):
        if self.diag is not None:
            return {"kind": "diagonal", "diag": self.diag.tolist()}
        return {"kind": "dense", "matrix": self.matrix.tolist()}


@dataclass(frozen=True)
class LimiterMode:
    """Exact clamp, or first-order pull-back toward the bound with gains k_upper/k_lower."""

    softened: bool = True
    k_upper: float = 1.0
    k_lower: float = 1.0

    def __post_init__(self):
        if self.softened and not (self.k_upper > 0 and self.k_lower > 0):
            raise ArgumentError("softened limiter gains must be strictly positive")

    @classmethod
    def exact(cls) -> "LimiterMode":
        return cls(softened=False)

    @classmethod
    def soft(cls, k_upper: float = 1.0, k_lower: float = 1.0) -> "LimiterMode":
        return cls(softened=True, k_upper=k_upper, k_lower=k_lower)

    def describe(self):
        if not self.softened:
            return {"kind": "exact"}
        return {"kind": "softened", "k_upper": self.k_upper, "k_lower": self.k_lower}


class Method(str, enum.Enum):
    UNCONSTRAINED_LIKE = "unconstrained-like"
    GENERAL_DYNAMIC = "general-dynamic"
    PROJECTED_GRADIENT = "pgd"


class IntegratorKind(str, enum.Enum):
    EXPLICIT_RK45 = "rk45"
    STIFF_IMPLICIT = "stiff"


@dataclass(frozen=True)
class SolveOptions:
    method: Method = Method.UNCONSTRAINED_LIKE
    integrator: IntegratorKind = IntegratorKind.EXPLICIT_RK45
    rel_tol: float = 1e-3
    abs_tol: float = 1e-6
    horizon: float = 100.0
    stationarity_tol: float = 1e-8
    # False integrates the whole horizon regardless of the residual.
    early_stop: bool = True
    active_tol: float = 1e-10
    # activity threshold for the final KKT report; an asymptotic approach to a bound
    # only resolves to about the integrator's absolute tolerance
    kkt_active_tol: float = 1e-6
    degeneracy_tol: float = 1e-6
    sample_stride: int = 1
    seed: int = 0
    limiter: LimiterMode = field(default_factory=LimiterMode.soft)
    # Lets a dense gain through the limited flow; used to exhibit the non-diagonal failure.
    allow_dense_limiter: bool = False
    # Decide limiter activity once per accepted step instead of at every evaluation.
    # None freezes it for the implicit integrator only, whose stage equations need a
    # right-hand side without a switch inside the step.
    freeze_activity: Optional[bool] = None
    max_steps: int = 200_000
    initial_step: Optional[float] = None
    max_step: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "integrator", IntegratorKind(self.integrator))
        if self.freeze_activity is None:
            object.__setattr__(self, "freeze_activity", self.integrator is IntegratorKind.STIFF_IMPLICIT)
        for name in ("rel_tol", "abs_tol", "stationarity_tol", "active_tol", "kkt_active_tol", "degeneracy_tol"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"{name} must be > 0")
        if not self.horizon > 0:
            raise ArgumentError("horizon must be > 0")
        if self.sample_stride < 1:
            raise ArgumentError("sample_stride must be >= 1")


@dataclass(frozen=True)
class TrajectorySample:
    tau: float
    theta: np.ndarray
    f: float
    residual: float


@dataclass
class SolveStats:
    rhs_evals: int = 0
    qp_solves: int = 0
    newton_iters: int = 0
    jac_evals: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0
    f_evals: int = 0
    grad_evals: int = 0
    wall_time: float = 0.0


@dataclass
class SolveReport:
    final_theta: np.ndarray
    final_f: float
    kkt: "object"  # kkt.KKTReport
    samples: list
    stats: SolveStats
    converged: bool
    method: str = ""
    problem: str = ""
    init_clamped: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "method": self.method,
            "converged": bool(self.converged),
            "message": self.message,
            "init_clamped": bool(self.init_clamped),
            "final_theta": np.asarray(self.final_theta).tolist(),
            "final_f": float(self.final_f),
            "kkt": self.kkt.to_dict() if self.kkt is not None else None,
            "stats": asdict(self.stats),
            "n_samples": len(self.samples),
        }


def project_to_box(theta, problem: BoxProblem) -> np.ndarray:
    theta = _as_vector(theta, problem.n)
    if not np.all(np.isfinite(theta)):
        raise ArgumentError("theta must be finite")
    return np.minimum(np.maximum(theta, problem.lower), problem.upper)


def check_feasible(theta, problem: BoxProblem, tol: float = 0.0) -> tuple[bool, float]:
    """Return ``(feasible, worst_violation)`` with violation measured past the bounds."""
    if tol < 0:
        raise ArgumentError("tol must be >= 0")
    theta = _as_vector(theta, problem.n)
    over = np.maximum(theta - problem.upper, 0.0)
    under = np.maximum(problem.lower - theta, 0.0)
    worst = float(max(np.max(over, initial=0.0), np.max(under, initial=0.0)))
    return worst <= tol, worst


@dataclass(frozen=True)
class SelectionMatrixView:
    """Rows of the active-constraint Jacobian: ``(i, +1)`` is an upper row, ``(i, -1)`` a lower row."""

    rows: tuple

    def __post_init__(self):
        rows = tuple((int(i), int(s)) for i, s in self.rows)
        seen: dict[int, int] = {}
        for i, s in rows:
            if s not in (1, -1):
                raise ArgumentError(f"row sign must be +1 or -1, got {s}")
            if i in seen:
                raise ArgumentError(f"component {i} appears in more than one row")
            seen[i] = s
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return len(self.rows)

    def matrix(self, n: int) -> np.ndarray:
        h = np.zeros((len(self.rows), n))
        for r, (i, s) in enumerate(self.rows):
            if not 0 <= i < n:
                raise ArgumentError(f"component index {i} out of range for n={n}")
            h[r, i] = s
        return h

    def indices(self) -> np.ndarray:
        return np.array([i for i, _ in self.rows], dtype=int)

    def signs(self) -> np.ndarray:
        return np.array([s for _, s in self.rows], dtype=float)

    def projector_mask(self, n: int) -> np.ndarray:
        """Diagonal of ``h^+ h``: True where a component is pinned."""
        mask = np.zeros(n, dtype=bool)
        mask[self.indices()] = True
        return mask


@dataclass(frozen=True)
class ActiveBoundSet:
    """Components sitting on their lower / upper bound (0-based indices)."""

    lower: frozenset = frozenset()
    upper: frozenset = frozenset()

    def __post_init__(self):
        lower = frozenset(int(i) for i in self.lower)
        upper = frozenset(int(i) for i in self.upper)
        if lower & upper:
            raise ArgumentError(f"components {sorted(lower & upper)} cannot be active on both sides")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_rows(cls, rows) -> "ActiveBoundSet":
        rows = SelectionMatrixView(tuple(rows)).rows
        return cls(lower={i for i, s in rows if s < 0}, upper={i for i, s in rows if s > 0})

    def __len__(self):
        return len(self.lower) + len(self.upper)

    def __bool__(self):
        return bool(self.lower or self.upper)

    def rows(self) -> SelectionMatrixView:
        rows = [(i, 1) for i in self.upper] + [(i, -1) for i in self.lower]
        return SelectionMatrixView(tuple(sorted(rows)))

    def mask(self, n: int) -> np.ndarray:
        return self.rows().projector_mask(n)

    def to_dict(self):
        return {"lower": sorted(self.lower), "upper": sorted(self.upper)}
