"""Command-line front end: ``boxdyn solve | bench | compare | pde-ident``.

Exit codes: 0 success, 2 usage or configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    ArgumentError,
    BoxDynError,
    BoxProblem,
    EvaluationError,
    GainMatrix,
    IntegratorKind,
    LimiterMode,
    Method,
    MethodContractError,
    SolveError,
    SolveOptions,
    SolveReport,
)
from .problems import ProblemSpec, problem_from_id
from .solve import solve_to_stationarity

log = logging.getLogger("boxdyn")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

TRAJECTORY_SCHEMA = "boxdyn-trajectory v1"
BENCH_SCHEMA = "boxdyn-bench v1"
CONDUCTIVITY_SCHEMA = "boxdyn-conductivity v1"
PDE_BATCH_SCHEMA = "boxdyn-pde-batch v1"


class ConfigError(ArgumentError):
    """Bad command-line value or configuration file."""


# ---------------------------------------------------------------- parsing helpers


def parse_floats(text: str, what: str = "value") -> np.ndarray:
    try:
        vals = [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {what} {text!r} as a comma-separated list of numbers") from None
    if not vals:
        raise ConfigError(f"empty {what}")
    return np.array(vals)


def parse_gain(text: str, n: int) -> GainMatrix:
    """``2.0`` (scaled identity), ``diag:a,b,...`` or ``dense:a,b;c,d`` (rows split by ';')."""
    kind, sep, body = text.partition(":")
    if not sep:
        try:
            return GainMatrix.identity(n, float(text))
        except ValueError:
            raise ConfigError(f"cannot parse gain {text!r}") from None
    if kind == "diag":
        d = parse_floats(body, "gain diagonal")
        if d.size != n:
            raise ConfigError(f"gain diagonal has {d.size} entries, problem has {n}")
        return GainMatrix.diagonal(d)
    if kind == "dense":
        rows = [parse_floats(r, "gain row") for r in body.split(";") if r.strip()]
        if len(rows) != n or any(r.size != n for r in rows):
            raise ConfigError(f"dense gain must be {n}x{n}")
        return GainMatrix.dense(np.vstack(rows))
    raise ConfigError(f"unknown gain kind {kind!r} (use a scalar, diag: or dense:)")


def parse_init(text: str, problem: BoxProblem, default: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``default``, ``const:x``, ``uniform`` (the box), ``uniform:lo,hi`` or a literal list."""
    kind, sep, body = text.partition(":")
    if text == "default":
        return np.array(default, dtype=float)
    if kind == "const" and sep:
        return np.full(problem.n, float(parse_floats(body, "init constant")[0]))
    if kind == "uniform":
        if sep:
            lo, hi = parse_floats(body, "uniform range")[:2]
        else:
            lo, hi = problem.lower, problem.upper
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ConfigError("uniform init needs a range when the box is unbounded")
        return rng.uniform(lo, hi, problem.n)
    theta = parse_floats(text, "init")
    if theta.size != problem.n:
        raise ConfigError(f"init has {theta.size} entries, problem has {problem.n}")
    return theta


def parse_limiter(text: Optional[str]) -> LimiterMode:
    if text is None or text in ("soft", "softened"):
        return LimiterMode.soft()
    if text == "exact":
        return LimiterMode.exact()
    raise ConfigError(f"unknown limiter {text!r} (soft or exact)")


def _enum(cls, text, what):
    try:
        return cls(text)
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ConfigError(f"unknown {what} {text!r} (choose from {choices})") from None


def _pick(value, fallback):
    return fallback if value is None else value


def build_options(args, method: Optional[str] = None) -> SolveOptions:
    return SolveOptions(
        method=_enum(Method, method or args.method or "unconstrained-like", "method"),
        integrator=_enum(IntegratorKind, args.integrator or "rk45", "integrator"),
        rel_tol=_pick(args.rtol, 1e-3),
        abs_tol=_pick(args.atol, 1e-6),
        horizon=_pick(args.horizon, 100.0),
        stationarity_tol=args.stationarity_tol,
        early_stop=not args.no_early_stop,
        limiter=parse_limiter(args.limiter),
        allow_dense_limiter=args.allow_dense,
        seed=_pick(args.seed, 0),
    )


def load_problem(args) -> tuple[BoxProblem, ProblemSpec]:
    return problem_from_id(args.problem)


# ---------------------------------------------------------------- writers


def _out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_table(path: Path, schema: str, columns: list, rows: list, fmt: str = "csv") -> Path:
    """CSV with a versioned ``#`` header line, or the same content as JSON."""
    path = path.with_suffix(".json" if fmt == "json" else ".csv")
    if fmt == "json":
        path.write_text(json.dumps({"schema": schema, "columns": columns, "rows": rows}, indent=1))
        return path
    with path.open("w", newline="") as fh:
        fh.write(f"# {schema}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)
    return path


def write_trajectory(path: Path, report: SolveReport, fmt: str = "csv") -> Path:
    n = report.final_theta.shape[0]
    columns = ["tau"] + [f"theta_{i + 1}" for i in range(n)] + ["f", "residual"]
    rows = [[s.tau, *map(float, s.theta), float(s.f), s.residual] for s in report.samples]
    return write_table(path, TRAJECTORY_SCHEMA, columns, rows, fmt)


def write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2, default=_jsonable))
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, set | frozenset):
        return sorted(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ---------------------------------------------------------------- commands


def _run(problem, gain, opts, theta0) -> tuple[SolveReport, bool]:
    """Solve; on failure return the partial report and False."""
    try:
        return solve_to_stationarity(problem, gain, opts, theta0), True
    except SolveError as exc:
        log.warning("solver failure: %s", exc)
        return exc.report, False


def cmd_solve(args) -> int:
    problem, spec = load_problem(args)
    opts = build_options(args)
    gain = parse_gain(args.gain, problem.n)
    theta0 = parse_init(args.init, problem, spec.default_init, np.random.default_rng(opts.seed))
    report, ok = _run(problem, gain, opts, theta0)
    out = _out_dir(args)
    if report is not None:
        traj = write_trajectory(out / "trajectory", report, args.format)
        payload = report.to_dict()
        payload.update(gain=gain.describe(), limiter=opts.limiter.describe(), init=theta0)
        write_json(out / "report.json", payload)
        with np.printoptions(precision=6, suppress=True, threshold=12):
            print(f"{problem.name}: theta = {report.final_theta}  f = {report.final_f:.6g}")
        print(
            f"residual {report.kkt.residual_norm:.3e}  converged {report.converged}  "
            f"rhs_evals {report.stats.rhs_evals}  qp_solves {report.stats.qp_solves}  -> {traj}"
        )
    return EXIT_OK if ok and report.converged else EXIT_SOLVER


def cmd_bench(args) -> int:
    problem, spec = load_problem(args)
    methods = [m.strip() for m in (args.method or "unconstrained-like,general-dynamic,pgd").split(",") if m.strip()]
    for m in methods:
        _enum(Method, m, "method")
    gain = parse_gain(args.gain, problem.n)
    runs = _pick(args.runs, 10)
    seed = _pick(args.seed, 0)
    if runs < 1:
        raise ConfigError("--runs must be >= 1")
    init_spec = args.init if args.init != "default" else "uniform"
    inits = [parse_init(init_spec, problem, spec.default_init, np.random.default_rng([seed, i])) for i in range(runs)]

    columns = ["method", "runs", "successes", "mean_time", "median_time", "mean_rhs_evals", "mean_qp_solves"]
    table = []
    for m in methods:
        opts = build_options(args, m)
        times, rhs, qps, wins = [], [], [], 0
        for theta0 in inits:
            start = time.perf_counter()
            report, _ = _run(problem, gain, opts, theta0)
            times.append(time.perf_counter() - start)
            if report is None:
                continue
            rhs.append(report.stats.rhs_evals)
            qps.append(report.stats.qp_solves)
            wins += report.kkt.residual_norm < args.success_tol
        table.append(
            [
                m,
                runs,
                wins,
                round(statistics.fmean(times), 6),
                round(statistics.median(times), 6),
                statistics.fmean(rhs) if rhs else float("nan"),
                statistics.fmean(qps) if qps else float("nan"),
            ]
        )
    path = write_table(_out_dir(args) / "bench", BENCH_SCHEMA, columns, table, args.format)
    print(",".join(columns))
    for row in table:
        print(",".join(str(v) for v in row))
    print(f"-> {path}")
    return EXIT_OK


def align_nearest(a: SolveReport, b: SolveReport) -> tuple[float, int]:
    """Max ``||theta_a - theta_b||_inf`` over the union of sample times both runs cover.

    Each trajectory is read at its accepted sample nearest to the grid time.
    """
    ta = np.array([s.tau for s in a.samples])
    tb = np.array([s.tau for s in b.samples])
    xa = np.array([s.theta for s in a.samples])
    xb = np.array([s.theta for s in b.samples])
    end = min(ta[-1], tb[-1])
    grid = np.union1d(ta[ta <= end], tb[tb <= end])

    def nearest(t, grid_t):
        idx = np.clip(np.searchsorted(t, grid_t), 1, len(t) - 1)
        left = t[idx - 1]
        return np.where(grid_t - left <= t[idx] - grid_t, idx - 1, idx) if len(t) > 1 else np.zeros_like(idx)

    diff = np.abs(xa[nearest(ta, grid)] - xb[nearest(tb, grid)]).max(axis=1)
    return float(diff.max(initial=0.0)), int(grid.size)


def cmd_compare(args) -> int:
    problem, spec = load_problem(args)
    methods = [m.strip() for m in (args.method or "unconstrained-like,general-dynamic").split(",") if m.strip()]
    if len(methods) != 2:
        raise ConfigError("compare needs exactly two methods, e.g. --method unconstrained-like,general-dynamic")
    gain = parse_gain(args.gain, problem.n)
    theta0 = parse_init(args.init, problem, spec.default_init, np.random.default_rng(_pick(args.seed, 0)))
    # the equivalence being checked is stated for the exact limiter
    args.limiter = args.limiter or "exact"
    reports = []
    for m in methods:
        report, ok = _run(problem, gain, build_options(args, m), theta0)
        if not ok or report is None:
            return EXIT_SOLVER
        reports.append(report)
    max_diff, n_common = align_nearest(*reports)
    final_diff = float(np.max(np.abs(reports[0].final_theta - reports[1].final_theta)))
    payload = {
        "problem": problem.name,
        "methods": methods,
        "gain": gain.describe(),
        "init": theta0,
        "max_trajectory_diff": max_diff,
        "final_diff": final_diff,
        "common_times": n_common,
        "final_theta": {m: r.final_theta for m, r in zip(methods, reports)},
    }
    out = _out_dir(args)
    write_json(out / "compare.json", payload)
    for m, r in zip(methods, reports):
        write_trajectory(out / f"trajectory_{m}", r, args.format)
    print(f"{methods[0]} vs {methods[1]}: max trajectory diff {max_diff:.3e}, final diff {final_diff:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------- pde-ident

PDE_REQUIRED = (
    "material.rho",
    "material.cp",
    "material.length",
    "grid.nx",
    "grid.dt",
    "grid.t_end",
    "nodes",
    "noise.sigma",
    "seed",
)
PDE_OPTIONAL = (
    "truth",
    "sensors.positions",
    "sensors.weights",
    "init",
    "gain",
    "horizon",
    "rtol",
    "atol",
    "integrator",
    "limiter",
    "picard_tol",
    "batch.runs",
    "batch.init_low",
    "batch.init_high",
    "batch.fail_tol",
    "bc.t_init",
    "bc.ramp_rate",
    "bc.ramp_end",
    "bc.left_final",
    "bc.t_right",
)


def read_flat_config(path: Path) -> dict:
    """``key = value`` lines; ``[section]`` headers prefix the keys that follow (``section.key``)."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[__top__]\n" + path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    flat = {}
    for section in parser.sections():
        prefix = "" if section == "__top__" else section + "."
        for key, value in parser.items(section):
            flat[prefix + key] = value.strip()
    unknown = sorted(set(flat) - set(PDE_REQUIRED) - set(PDE_OPTIONAL))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key in PDE_REQUIRED:
        if key not in flat:
            raise ConfigError(f"missing required config key: {key}")
    return flat


def _num(flat, key, cast=float):
    try:
        return cast(flat[key])
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {flat[key]!r}") from None


def pde_config_from(flat: dict, args):
    """Build an ``IdentConfig`` from the file, with command-line flags taking precedence."""
    from . import pde_ident as pi

    nodes_text = flat["nodes"]
    if nodes_text.startswith("linspace:"):
        lo, hi, count = parse_floats(nodes_text[len("linspace:") :], "nodes")
        nodes = np.linspace(lo, hi, int(count))
    else:
        nodes = parse_floats(nodes_text, "nodes")
    n = nodes.size
    bc_fields = {k[3:]: _num(flat, k) for k in flat if k.startswith("bc.")}
    cfg = pi.IdentConfig(
        material=pi.MaterialParams(_num(flat, "material.rho"), _num(flat, "material.cp"), _num(flat, "material.length")),
        grid=pi.GridSpec(_num(flat, "grid.nx", int), _num(flat, "grid.dt"), _num(flat, "grid.t_end")),
        nodes=nodes,
        truth_theta=parse_floats(flat["truth"], "truth") if "truth" in flat else pi.TRUTH_THETA.copy(),
        bc=pi.BoundaryData(**bc_fields),
        noise_sigma=_num(flat, "noise.sigma"),
        seed=_num(flat, "seed", int),
        theta0=np.full(n, 2.0),
    )
    if cfg.truth_theta.size != n:
        raise ConfigError(f"truth has {cfg.truth_theta.size} entries, nodes has {n}")
    if "sensors.positions" in flat:
        cfg = replace(cfg, positions=parse_floats(flat["sensors.positions"], "sensor positions"))
    if "sensors.weights" in flat:
        cfg = replace(cfg, weights=parse_floats(flat["sensors.weights"], "sensor weights"))
    for key, name in (("horizon", "horizon"), ("rtol", "rel_tol"), ("atol", "abs_tol"), ("picard_tol", "picard_tol")):
        if key in flat:
            cfg = replace(cfg, **{name: _num(flat, key)})
    gain = args.gain if args.gain is not None else flat.get("gain")
    if gain is not None:
        try:
            cfg = replace(cfg, gain=float(gain))
        except ValueError:
            raise ConfigError(f"pde-ident gain must be a scalar, got {gain!r}") from None
    integrator = args.integrator or flat.get("integrator")
    if integrator:
        cfg = replace(cfg, integrator=_enum(IntegratorKind, integrator, "integrator"))
    cfg = replace(cfg, limiter=parse_limiter(args.limiter or flat.get("limiter")))
    overrides = {"seed": args.seed, "horizon": args.horizon, "rel_tol": args.rtol, "abs_tol": args.atol}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    init = args.init if args.init != "default" else flat.get("init")
    if init:
        probe = BoxProblem(n, lambda t: 0.0, lambda t: np.zeros(n), np.zeros(n), np.full(n, np.inf))
        cfg = replace(cfg, theta0=parse_init(init, probe, cfg.theta0, np.random.default_rng(cfg.seed)))
    batch = {
        "runs": _pick(args.runs, _num(flat, "batch.runs", int) if "batch.runs" in flat else 1),
        "init_low": _num(flat, "batch.init_low") if "batch.init_low" in flat else 0.0,
        "init_high": _num(flat, "batch.init_high") if "batch.init_high" in flat else 2.0,
        "fail_tol": _num(flat, "batch.fail_tol") if "batch.fail_tol" in flat else 0.15,
    }
    return cfg, batch


def cmd_pde_ident(args) -> int:
    from . import pde_ident as pi

    flat = read_flat_config(Path(args.config))
    cfg, batch = pde_config_from(flat, args)
    out = _out_dir(args)
    ctx = pi.build_context(cfg)
    log.info("objective at truth: %.6g", ctx.objective(cfg.truth_theta))
    if batch["runs"] > 1:
        start = time.perf_counter()
        results = pi.run_batch(cfg, batch["runs"], batch["init_low"], batch["init_high"], batch["fail_tol"], ctx)
        total = time.perf_counter() - start
        columns = ["run", "wall_time", "max_node_error", "converged", "failed", "rhs_evals"]
        rows = [[r.run, round(r.wall_time, 4), r.max_node_error, r.converged, r.failed, r.rhs_evals] for r in results]
        write_table(out / "pde_batch", PDE_BATCH_SCHEMA, columns, rows, args.format)
        failures = sum(r.failed for r in results)
        times = [r.wall_time for r in results]
        summary = {
            "runs": len(results),
            "failures": failures,
            "mean_time": statistics.fmean(times),
            "median_time": statistics.median(times),
            "total_time": total,
            "max_node_error": max((r.max_node_error for r in results), default=float("nan")),
        }
        write_json(out / "pde_batch_summary.json", summary)
        print(f"runs {summary['runs']}  failures {failures}  mean time {summary['mean_time']:.2f}s  total {total:.1f}s")
        return EXIT_OK if failures == 0 else EXIT_SOLVER

    try:
        res = pi.identify_conductivity(cfg, ctx)
    except (SolveError, EvaluationError) as exc:
        log.error("identification failed: %s", exc)
        report = getattr(exc, "report", None)
        if report is not None:
            write_trajectory(out / "trajectory", report, args.format)
        return EXIT_SOLVER
    temps = np.linspace(cfg.nodes[0], cfg.nodes[-1], 41)
    k_rec = pi.conductivity_eval(pi.ConductivityModel(cfg.nodes, res.report.final_theta), temps)
    k_true = pi.conductivity_eval(pi.ConductivityModel(cfg.nodes, cfg.truth_theta), temps)
    rows = [[float(t), float(a), float(b), bool(np.any(np.isclose(t, cfg.nodes)))] for t, a, b in zip(temps, k_rec, k_true)]
    write_table(out / "conductivity", CONDUCTIVITY_SCHEMA, ["temperature", "k_recovered", "k_true", "is_node"], rows, args.format)
    write_trajectory(out / "trajectory", res.report, args.format)
    write_json(out / "report.json", res.to_dict())
    with np.printoptions(precision=4, suppress=True):
        print(f"theta = {res.report.final_theta}")
        print(f"node values = {res.node_values}  (truth {res.truth_node_values})")
    print(f"max node error {res.max_node_error:.4g}  residual {res.report.kkt.residual_norm:.3e}")
    for e in res.bound_events:
        print(f"theta_{e.index + 1} on its bound from tau={e.touched_at:.4g} until {e.departed_at}")
    return EXIT_OK if res.max_node_error <= batch["fail_tol"] else EXIT_SOLVER


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", default="example1", help="example1, example2[:lower], genwood[:n]")
    common.add_argument("--method", help="unconstrained-like, general-dynamic or pgd (bench/compare: comma list)")
    common.add_argument("--integrator", help="rk45 (default) or stiff")
    common.add_argument("--gain", help="scalar, diag:a,b,... or dense:a,b;c,d (default 1)")
    common.add_argument("--init", default="default", help="default, const:x, uniform[:lo,hi] or a,b,...")
    common.add_argument("--rtol", type=float)
    common.add_argument("--atol", type=float)
    common.add_argument("--horizon", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--runs", type=int)
    common.add_argument("--out-dir", default="out")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--limiter", choices=("soft", "exact"), help="limiter mode of the unconstrained-like flow")
    common.add_argument("--allow-dense", action="store_true", help="let a dense gain through the limited flow")
    common.add_argument("--stationarity-tol", type=float, default=1e-8)
    common.add_argument("--no-early-stop", action="store_true", help="always integrate the full horizon")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="boxdyn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="run one solve").set_defaults(func=cmd_solve)
    bench = sub.add_parser("bench", parents=[common], help="repeat solves from random starts")
    bench.add_argument("--success-tol", type=float, default=1e-6, help="final KKT residual counted as success")
    bench.set_defaults(func=cmd_bench)
    sub.add_parser("compare", parents=[common], help="run two methods from one start").set_defaults(func=cmd_compare)
    pde = sub.add_parser("pde-ident", parents=[common], help="conductivity identification case study")
    pde.add_argument("--config", required=True, help="flat key = value file")
    pde.set_defaults(func=cmd_pde_ident)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.gain is None and args.command != "pde-ident":
        args.gain = "1"
    try:
        return args.func(args)
    except (ArgumentError, MethodContractError) as exc:
        print(f"boxdyn: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BoxDynError as exc:
        print(f"boxdyn: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
