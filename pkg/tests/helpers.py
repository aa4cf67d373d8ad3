"""Random instance generators used across test modules."""

import numpy as np

from boxdyn.problems import example1, example2, genwood


def shipped_problems():
    return [example1(), example2(0.0), example2(0.1), genwood(8)]


def random_feasible_state(rng, problem, p_bound=0.35):
    """Uniform interior point with each component snapped to a bound with probability ``p_bound``."""
    lo = problem.lower
    hi = np.where(np.isfinite(problem.upper), problem.upper, lo + 5.0)
    theta = rng.uniform(lo, hi)
    for i in range(problem.n):
        r = rng.random()
        if r < p_bound / 2:
            theta[i] = lo[i]
        elif r < p_bound and np.isfinite(problem.upper[i]):
            theta[i] = problem.upper[i]
    return theta


def random_selection(rng, n):
    rows = []
    for i in rng.permutation(n)[: rng.integers(0, n + 1)]:
        rows.append((int(i), int(rng.choice([-1, 1]))))
    return tuple(rows)
