"""Thermal-conductivity identification for 1-D nonlinear transient heat conduction.

The conductivity is a Lagrange interpolant through node values that are cumulative sums
of the parameters, so ``theta >= 0`` makes it nondecreasing across the nodes. The
forward model is an implicit-Euler, conservative finite-difference discretization with
a lagged-conductivity (Picard) iteration per time step, Anderson-accelerated.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numba
import numpy as np
from scipy.integrate import trapezoid

from .core import (
    ArgumentError,
    BoxProblem,
    EvaluationError,
    GainMatrix,
    IntegratorKind,
    LimiterMode,
    Method,
    SolveError,
    SolveOptions,
    SolveReport,
)
from .solve import solve_to_stationarity

log = logging.getLogger(__name__)

K_MIN = 1e-6


class ForwardSolveError(EvaluationError):
    """The Picard iteration of a time step did not converge."""


class ModelError(EvaluationError):
    """The conductivity model produced a non-finite value."""


@dataclass(frozen=True)
class MaterialParams:
    rho: float = 1000.0
    cp: float = 1000.0
    length: float = 0.01

    def __post_init__(self):
        if not (self.rho > 0 and self.cp > 0 and self.length > 0):
            raise ArgumentError("rho, cp and length must be positive")


@dataclass(frozen=True)
class GridSpec:
    nx: int = 51
    dt: float = 0.1
    t_end: float = 100.0

    def __post_init__(self):
        if self.nx < 3:
            raise ArgumentError("nx must be >= 3")
        if not (self.dt > 0 and self.t_end > 0):
            raise ArgumentError("dt and t_end must be positive")

    @property
    def nt(self) -> int:
        return int(round(self.t_end / self.dt))

    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt


@dataclass(frozen=True)
class BoundaryData:
    """Initial temperature, a left wall ramping at ``ramp_rate`` up to ``left_final``, a fixed right wall."""

    t_init: float = 600.0
    left_start: float = 600.0
    ramp_rate: float = 16.0
    ramp_end: float = 25.0
    left_final: float = 1000.0
    t_right: float = 600.0

    def left(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= self.ramp_end, self.left_start + self.ramp_rate * t, self.left_final)


@dataclass(frozen=True)
class ConductivityModel:
    nodes: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if nodes.ndim != 1 or nodes.shape != theta.shape or nodes.size < 1:
            raise ArgumentError("nodes and theta must be 1-D arrays of equal length")
        if np.any(np.diff(nodes) <= 0):
            raise ArgumentError("conductivity nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "theta", theta)

    @property
    def node_values(self) -> np.ndarray:
        return np.cumsum(self.theta)

    @property
    def bary_weights(self) -> np.ndarray:
        diff = self.nodes[:, None] - self.nodes[None, :]
        np.fill_diagonal(diff, 1.0)
        return 1.0 / np.prod(diff, axis=1)


def default_nodes(n: int = 5, t_low: float = 600.0, t_high: float = 1000.0) -> np.ndarray:
    return np.linspace(t_low, t_high, n)


# cumulative sums [0.8614, 1.0743, 1.2919, 1.6482, 2.0947] W/(m K) at 600..1000 K
TRUTH_THETA = np.array([0.8614, 0.2129, 0.2176, 0.3563, 0.4465])


@numba.njit(cache=True, error_model="numpy")
def _cond(temp, nodes, weights, values, kmin):
    num = 0.0
    den = 0.0
    for i in range(nodes.shape[0]):
        d = temp - nodes[i]
        if d == 0.0:
            k = values[i]
            return k if (k > kmin or k != k) else kmin
        c = weights[i] / d
        num += c * values[i]
        den += c
    k = num / den
    # NaN fails the comparison and must not be floored away
    return k if (k > kmin or k != k) else kmin


def _newton_coefficients(nodes: np.ndarray, values: np.ndarray) -> np.ndarray:
    coef = values.astype(float).copy()
    for level in range(1, nodes.shape[0]):
        coef[level:] = (coef[level:] - coef[level - 1 : -1]) / (nodes[level:] - nodes[:-level])
    return coef


@numba.njit(cache=True, error_model="numpy")
def _cond_nested(temp, nodes, coef, kmin):
    # Newton form, nested like Horner; no divisions in the inner loop of the forward solve
    n = coef.shape[0]
    k = coef[n - 1]
    for i in range(n - 2, -1, -1):
        k = k * (temp - nodes[i]) + coef[i]
    return k if (k > kmin or k != k) else kmin


@numba.njit(cache=True, error_model="numpy")
def _eval_many(temps, nodes, weights, values, kmin):
    out = np.empty(temps.shape[0])
    for i in range(temps.shape[0]):
        out[i] = _cond(temps[i], nodes, weights, values, kmin)
    return out


@numba.njit(cache=True, error_model="numpy")
def _picard_map(prev, cur, out, nodes, coef, kmin, r, knode, kface, cp_, dp_):
    """One lagged-conductivity sweep: solve the linear step with k frozen at ``cur``.

    Returns the largest change ``|out - cur|``, or -1 for a non-finite conductivity.
    """
    nx = cur.shape[0]
    ksum = 0.0
    for i in range(nx):
        knode[i] = _cond_nested(cur[i], nodes, coef, kmin)
        ksum += knode[i]
    if not np.isfinite(ksum):
        return -1.0
    for i in range(nx - 1):
        kface[i] = 0.5 * (knode[i] + knode[i + 1])
    # Thomas algorithm on the interior nodes 1..nx-2
    for j in range(1, nx - 1):
        a = -r * kface[j - 1]
        c = -r * kface[j]
        b = 1.0 + r * (kface[j - 1] + kface[j])
        d = prev[j]
        if j == 1:
            d += r * kface[0] * cur[0]
            a = 0.0
        if j == nx - 2:
            d += r * kface[nx - 2] * cur[nx - 1]
            c = 0.0
        if j == 1:
            inv = 1.0 / b
            cp_[j] = c * inv
            dp_[j] = d * inv
        else:
            inv = 1.0 / (b - a * cp_[j - 1])
            cp_[j] = c * inv
            dp_[j] = (d - a * dp_[j - 1]) * inv
    out[0] = cur[0]
    out[nx - 1] = cur[nx - 1]
    out[nx - 2] = dp_[nx - 2]
    change = abs(out[nx - 2] - cur[nx - 2])
    for j in range(nx - 3, 0, -1):
        out[j] = dp_[j] - cp_[j] * out[j + 1]
        dlt = abs(out[j] - cur[j])
        if dlt > change:
            change = dlt
    return change


@numba.njit(cache=True, error_model="numpy")
def _forward_kernel(nodes, coef, kmin, rho_cp, dx, dt, nt, nx, t_init, left, t_right, tol, max_sweeps):
    field = np.empty((nt + 1, nx))
    field[0, :] = t_init
    field[0, 0] = left[0]
    field[0, nx - 1] = t_right
    r = dt / (rho_cp * dx * dx)
    cur = np.empty(nx)
    g = np.empty(nx)
    knode = np.empty(nx)
    kface = np.empty(nx - 1)
    cp_ = np.empty(nx)
    dp_ = np.empty(nx)
    # Anderson acceleration of the sweeps (depth 2): same fixed point, fewer sweeps where
    # the plain iteration contracts slowly (conductivity near its floor)
    depth = 2
    m = nx - 2
    xs = np.empty((depth + 1, m))
    fs = np.empty((depth + 1, m))
    dF = np.empty((m, depth))
    dX = np.empty((m, depth))
    gamma = np.empty(depth)
    sweeps = 0
    for n in range(nt):
        for i in range(nx):
            # first Picard guess: quadratic extrapolation in time
            if n > 1:
                cur[i] = 3.0 * (field[n, i] - field[n - 1, i]) + field[n - 2, i]
            elif n > 0:
                cur[i] = 2.0 * field[n, i] - field[n - 1, i]
            else:
                cur[i] = field[n, i]
        cur[0] = left[n + 1]
        cur[nx - 1] = t_right
        converged = False
        stored = 0
        for sweep in range(max_sweeps):
            sweeps += 1
            change = _picard_map(field[n], cur, g, nodes, coef, kmin, r, knode, kface, cp_, dp_)
            if change < 0.0:
                return field, 2, sweeps
            if change < tol:
                cur, g = g, cur
                converged = True
                break
            if sweep == 0:
                # most steps converge in two or three plain sweeps; accelerate only after that
                cur, g = g, cur
                continue
            # history of iterates and residuals, newest last
            if stored == depth + 1:
                for q in range(depth):
                    xs[q, :] = xs[q + 1, :]
                    fs[q, :] = fs[q + 1, :]
            else:
                stored += 1
            for j in range(m):
                xs[stored - 1, j] = cur[j + 1]
                fs[stored - 1, j] = g[j + 1] - cur[j + 1]
            k = stored - 1
            if k == 0:
                cur, g = g, cur
                continue
            for q in range(k):
                for j in range(m):
                    dF[j, q] = fs[q + 1, j] - fs[q, j]
                    dX[j, q] = xs[q + 1, j] - xs[q, j]
            # least-squares mixing coefficients from the k x k normal equations
            a11 = a12 = a22 = b1 = b2 = 0.0
            for j in range(m):
                f1 = dF[j, k - 1]
                a22 += f1 * f1
                b2 += f1 * fs[k, j]
                if k == 2:
                    f0 = dF[j, 0]
                    a11 += f0 * f0
                    a12 += f0 * f1
                    b1 += f0 * fs[k, j]
            gamma[0] = gamma[1] = 0.0
            det = a11 * a22 - a12 * a12
            if k == 2 and det > 1e-12 * a11 * a22:
                gamma[0] = (a22 * b1 - a12 * b2) / det
                gamma[1] = (a11 * b2 - a12 * b1) / det
            elif a22 > 0.0:
                # newest difference only
                gamma[k - 1] = b2 / a22
            total = 0.0
            for j in range(m):
                acc = g[j + 1]
                for q in range(k):
                    acc -= (dX[j, q] + dF[j, q]) * gamma[q]
                cur[j + 1] = acc
                total += acc
            if not np.isfinite(total):
                return field, 1, sweeps
        if not converged:
            return field, 1, sweeps
        for i in range(nx):
            field[n + 1, i] = cur[i]
    return field, 0, sweeps


def conductivity_eval(model: ConductivityModel, temps) -> np.ndarray:
    """Interpolated conductivity at ``temps`` (barycentric form), floored at ``K_MIN``."""
    t = np.atleast_1d(np.asarray(temps, dtype=float))
    out = _eval_many(t.ravel(), model.nodes, model.bary_weights, model.node_values, K_MIN)
    out = out.reshape(t.shape)
    return out if np.ndim(temps) else float(out[0])


def forward_solve(
    mat: MaterialParams,
    model: ConductivityModel,
    grid: GridSpec,
    bc: BoundaryData = BoundaryData(),
    picard_tol: float = 1e-8,
    max_sweeps: int = 20,
) -> np.ndarray:
    """Nodal temperatures, shape ``(nt + 1, nx)``, at every time step."""
    dx = mat.length / (grid.nx - 1)
    left = bc.left(grid.times())
    fld, status, _ = _forward_kernel(
        model.nodes,
        _newton_coefficients(model.nodes, model.node_values),
        K_MIN,
        mat.rho * mat.cp,
        dx,
        grid.dt,
        grid.nt,
        grid.nx,
        float(bc.t_init),
        left,
        float(bc.t_right),
        picard_tol,
        max_sweeps,
    )
    if status == 1:
        raise ForwardSolveError(f"Picard iteration did not reach {picard_tol:g} in {max_sweeps} sweeps")
    if status == 2:
        raise ModelError("conductivity model returned a non-finite value")
    return fld


def _interp_weights(positions, mat: MaterialParams, grid: GridSpec):
    dx = mat.length / (grid.nx - 1)
    s = np.asarray(positions, dtype=float) / dx
    idx = np.minimum(np.floor(s).astype(int), grid.nx - 2)
    return idx, s - idx


def sample_field(fld: np.ndarray, positions, mat: MaterialParams, grid: GridSpec) -> np.ndarray:
    """Linear interpolation of the field at ``positions``; shape ``(nt + 1, m)``."""
    idx, frac = _interp_weights(positions, mat, grid)
    return fld[:, idx] * (1.0 - frac) + fld[:, idx + 1] * frac


@dataclass(frozen=True)
class MeasurementSet:
    positions: np.ndarray
    weights: np.ndarray
    times: np.ndarray
    values: np.ndarray
    noise_sigma: float
    seed: int

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pos.ndim != 1 or pos.shape != w.shape:
            raise ArgumentError("positions and weights must be 1-D and of equal length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ArgumentError(f"weights must be positive and sum to 1, got sum {w.sum():.6g}")
        if self.values.shape != (self.times.shape[0], pos.shape[0]):
            raise ArgumentError("values must have shape (len(times), len(positions))")


def synthesize_measurements(
    fld: np.ndarray,
    mat: MaterialParams,
    grid: GridSpec,
    positions,
    weights,
    sigma: float,
    seed: int,
) -> MeasurementSet:
    """Sample the field at the sensors and add independent N(0, sigma^2) noise per sensor and instant."""
    pos = np.asarray(positions, dtype=float)
    if np.any(pos <= 0) or np.any(pos >= mat.length):
        raise ArgumentError("measurement positions must lie strictly inside (0, L)")
    if sigma < 0:
        raise ArgumentError("sigma must be >= 0")
    clean = sample_field(fld, pos, mat, grid)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=clean.shape) if sigma > 0 else 0.0
    return MeasurementSet(pos, np.asarray(weights, dtype=float), grid.times(), clean + noise, float(sigma), int(seed))


@dataclass(frozen=True)
class IdentContext:
    """Everything the objective needs besides theta."""

    meas: MeasurementSet
    mat: MaterialParams
    nodes: np.ndarray
    grid: GridSpec
    bc: BoundaryData = BoundaryData()
    picard_tol: float = 1e-8

    def objective(self, theta) -> float:
        return objective_eval(theta, self.meas, self.mat, self.nodes, self.grid, self.bc, self.picard_tol)


def objective_eval(theta, meas: MeasurementSet, mat, nodes, grid, bc=BoundaryData(), picard_tol=1e-8) -> float:
    """Weighted squared sensor mismatch integrated over the measurement window (trapezoidal rule)."""
    model = ConductivityModel(nodes, np.asarray(theta, dtype=float))
    fld = forward_solve(mat, model, grid, bc, picard_tol)
    sim = sample_field(fld, meas.positions, mat, grid)
    mis = ((sim - meas.values) ** 2) @ meas.weights
    return float(trapezoid(mis, meas.times))


def fd_gradient(theta, objective: Callable[[np.ndarray], float], rel_step: float = 1e-4, lower=0.0) -> np.ndarray:
    """Central differences with step ``rel_step * (1 + |theta_j|)``.

    Falls back to a forward difference where the backward point would cross ``lower``.
    """
    theta = np.asarray(theta, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), theta.shape)
    grad = np.empty_like(theta)
    f0 = None
    for j in range(theta.shape[0]):
        h = rel_step * (1.0 + abs(theta[j]))
        tp = theta.copy()
        tp[j] += h
        if theta[j] - h < lower[j]:
            if f0 is None:
                f0 = objective(theta)
            grad[j] = (objective(tp) - f0) / (tp[j] - theta[j])
        else:
            tm = theta.copy()
            tm[j] -= h
            grad[j] = (objective(tp) - objective(tm)) / (tp[j] - tm[j])
    return grad


@dataclass(frozen=True)
class IdentConfig:
    material: MaterialParams = MaterialParams()
    grid: GridSpec = GridSpec()
    nodes: np.ndarray = field(default_factory=default_nodes)
    truth_theta: np.ndarray = field(default_factory=lambda: TRUTH_THETA.copy())
    bc: BoundaryData = BoundaryData()
    positions: Optional[np.ndarray] = None
    weights: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    noise_sigma: float = 6.0
    seed: int = 0
    theta0: np.ndarray = field(default_factory=lambda: np.full(5, 2.0))
    gain: float = 1.0
    horizon: float = 200.0
    rel_tol: float = 1e-3
    abs_tol: float = 1e-6
    integrator: IntegratorKind = IntegratorKind.STIFF_IMPLICIT
    method: Method = Method.UNCONSTRAINED_LIKE
    limiter: LimiterMode = LimiterMode.soft()
    stationarity_tol: float = 1e-8
    picard_tol: float = 1e-8
    fd_step: float = 1e-4

    def sensor_positions(self) -> np.ndarray:
        if self.positions is not None:
            return np.asarray(self.positions, dtype=float)
        return self.material.length * np.array([1.0 / 3.0, 2.0 / 3.0])


@dataclass
class BoundEvent:
    index: int
    touched_at: float
    departed_at: Optional[float]


@dataclass
class IdentResult:
    report: SolveReport
    node_values: np.ndarray
    truth_node_values: np.ndarray
    max_node_error: float
    bound_events: list
    objective_at_truth: float

    def to_dict(self) -> dict:
        return {
            "report": self.report.to_dict(),
            "node_values": self.node_values.tolist(),
            "truth_node_values": self.truth_node_values.tolist(),
            "max_node_error": self.max_node_error,
            "objective_at_truth": self.objective_at_truth,
            "bound_events": [vars(e) for e in self.bound_events],
        }


def build_context(cfg: IdentConfig) -> IdentContext:
    truth = ConductivityModel(cfg.nodes, cfg.truth_theta)
    fld = forward_solve(cfg.material, truth, cfg.grid, cfg.bc, cfg.picard_tol)
    meas = synthesize_measurements(
        fld, cfg.material, cfg.grid, cfg.sensor_positions(), cfg.weights, cfg.noise_sigma, cfg.seed
    )
    return IdentContext(meas, cfg.material, np.asarray(cfg.nodes, dtype=float), cfg.grid, cfg.bc, cfg.picard_tol)


def identification_problem(ctx: IdentContext, fd_step: float = 1e-4) -> BoxProblem:
    n = ctx.nodes.shape[0]
    last: dict = {}

    def gradient(th):
        # the sampler asks again for the gradient the integrator has just computed
        key = np.asarray(th, dtype=float).tobytes()
        if key not in last:
            last.clear()
            last[key] = fd_gradient(th, ctx.objective, fd_step)
        return last[key].copy()

    return BoxProblem(
        n,
        ctx.objective,
        gradient,
        np.zeros(n),
        np.full(n, np.inf),
        name="conductivity-identification",
    )


def bound_events(report: SolveReport, lower: float = 0.0) -> list:
    """Times at which a parameter first sits on its lower bound and later leaves it."""
    events = []
    thetas = np.array([s.theta for s in report.samples])
    taus = np.array([s.tau for s in report.samples])
    for j in range(thetas.shape[1]):
        on = thetas[:, j] <= lower
        if not on.any():
            continue
        k = int(np.argmax(on))
        after = np.flatnonzero(~on[k:])
        events.append(BoundEvent(j, float(taus[k]), float(taus[k + after[0]]) if after.size else None))
    return events


def identify_conductivity(cfg: IdentConfig, ctx: Optional[IdentContext] = None) -> IdentResult:
    """Synthesize data (unless ``ctx`` is given) and recover the conductivity with the limited flow."""
    if ctx is None:
        ctx = build_context(cfg)
    problem = identification_problem(ctx, cfg.fd_step)
    opts = SolveOptions(
        method=cfg.method,
        integrator=cfg.integrator,
        rel_tol=cfg.rel_tol,
        abs_tol=cfg.abs_tol,
        horizon=cfg.horizon,
        stationarity_tol=cfg.stationarity_tol,
        limiter=cfg.limiter,
        seed=cfg.seed,
    )
    gain = GainMatrix.identity(problem.n, cfg.gain)
    start = time.perf_counter()
    report = solve_to_stationarity(problem, gain, opts, cfg.theta0)
    log.info("identification finished in %.2fs", time.perf_counter() - start)
    recovered = np.cumsum(report.final_theta)
    truth = np.cumsum(cfg.truth_theta)
    events = bound_events(report)
    for e in events:
        log.info("theta[%d] reached its bound at tau=%.4g, departed at %s", e.index, e.touched_at, e.departed_at)
    return IdentResult(
        report=report,
        node_values=recovered,
        truth_node_values=truth,
        max_node_error=float(np.max(np.abs(recovered - truth))),
        bound_events=events,
        objective_at_truth=ctx.objective(cfg.truth_theta),
    )


@dataclass
class BatchRun:
    run: int
    theta0: np.ndarray
    wall_time: float
    max_node_error: float
    converged: bool
    failed: bool
    rhs_evals: int
    message: str = ""


def run_batch(
    cfg: IdentConfig,
    runs: int,
    init_low: float = 0.0,
    init_high: float = 2.0,
    fail_tol: float = 0.15,
    ctx: Optional[IdentContext] = None,
) -> list[BatchRun]:
    """Repeat the identification from uniform random starts on one shared data set.

    Run ``i`` draws its start from ``default_rng([cfg.seed, i])``. A run fails when it
    raises or when its max node error exceeds ``fail_tol``.
    """
    if runs < 1:
        raise ArgumentError("runs must be >= 1")
    if ctx is None:
        ctx = build_context(cfg)
    out = []
    for i in range(runs):
        theta0 = np.random.default_rng([cfg.seed, i]).uniform(init_low, init_high, cfg.nodes.shape[0])
        start = time.perf_counter()
        try:
            res = identify_conductivity(replace(cfg, theta0=theta0), ctx)
            err = res.max_node_error
            item = BatchRun(
                i, theta0, time.perf_counter() - start, err, res.report.converged, not err <= fail_tol, res.report.stats.rhs_evals
            )
        except (SolveError, EvaluationError) as exc:
            item = BatchRun(i, theta0, time.perf_counter() - start, float("nan"), False, True, 0, str(exc))
        log.info("batch run %d: error %.4g in %.1fs%s", i, item.max_node_error, item.wall_time, " FAILED" if item.failed else "")
        out.append(item)
    return out
