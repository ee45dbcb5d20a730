"""Box-constrained limited-memory quasi-Newton minimisation with multi-start.

A projected-gradient L-BFGS: the usual two-loop recursion supplies the search
direction, components pushing into an active bound are zeroed, and a
backtracking Armijo line search walks the projected path x(a) = clip(x + a*d).
This is deliberately lighter than the full generalized-Cauchy-point machinery;
the objectives here (small perceptrons) are cheap and smooth, and multi-start
covers the difference.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .spaces import ParameterSpace

_ARMIJO_C1 = 1e-4
_CURVATURE_EPS = 1e-12
_MAX_BACKTRACKS = 60


@dataclass
class MinimizeOptions:
    memory: int = 10
    max_evals: int = 500
    grad_tol: float = 1e-6
    restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if min(self.memory, self.max_evals) < 1 or self.grad_tol <= 0 or self.restarts < 0:
            raise ValueError("minimizer options must be positive (restarts >= 0)")


@dataclass
class MinimizeResult:
    x_min: np.ndarray
    f_min: float
    evals: int
    converged: bool
    iterations: int = 0


def _two_loop(g: np.ndarray, pairs: deque) -> np.ndarray:
    """L-BFGS two-loop recursion: approximates H^{-1} g."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append(a)
    if pairs:
        s, y, _ = pairs[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def minimize(
    objective,
    gradient,
    space: ParameterSpace,
    x0,
    opts: MinimizeOptions | None = None,
) -> MinimizeResult:
    """Minimise objective over the box from x0.

    Convergence is declared when the projected gradient infinity-norm drops to
    grad_tol. Non-finite objective values truncate the step; if no finite step
    exists the best finite iterate is returned with converged=False. Every
    point ever evaluated lies inside the box.
    """
    opts = opts or MinimizeOptions()
    lo, hi = space.lower, space.upper
    x = space.clamp(np.asarray(x0, dtype=float))
    f = float(objective(x))
    evals = 1
    if not np.isfinite(f):
        return MinimizeResult(x, np.inf, evals, False, 0)
    g = np.asarray(gradient(x), dtype=float)
    pairs: deque = deque(maxlen=opts.memory)
    converged = False
    iterations = 0

    while evals < opts.max_evals:
        pg = x - np.clip(x - g, lo, hi)
        if np.max(np.abs(pg)) <= opts.grad_tol:
            converged = True
            break
        iterations += 1

        d = -_two_loop(g, pairs)
        blocked = ((x <= lo) & (d < 0)) | ((x >= hi) & (d > 0))
        d[blocked] = 0.0
        if np.dot(d, g) >= 0.0 or not np.any(d):
            # not a descent direction: fall back to projected steepest descent
            d = -g.copy()
            d[((x <= lo) & (d < 0)) | ((x >= hi) & (d > 0))] = 0.0
            pairs.clear()
            if not np.any(d):
                converged = True
                break

        alpha = 1.0
        accepted = False
        xt = x
        ft = f
        for _ in range(_MAX_BACKTRACKS):
            if evals >= opts.max_evals:
                break
            xt = np.clip(x + alpha * d, lo, hi)
            if np.array_equal(xt, x):
                break
            ft = float(objective(xt))
            evals += 1
            if np.isfinite(ft) and ft <= f + _ARMIJO_C1 * np.dot(g, xt - x):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break

        g_new = np.asarray(gradient(xt), dtype=float)
        s = xt - x
        y = g_new - g
        if np.dot(s, y) > _CURVATURE_EPS:
            rho = 1.0 / np.dot(s, y)
            pairs.append((s, y, rho))
        else:
            pairs.clear()
        x, f, g = xt, ft, g_new

    return MinimizeResult(x_min=x, f_min=f, evals=evals, converged=converged, iterations=iterations)


def multistart_minimize(
    objective,
    gradient,
    space: ParameterSpace,
    starts,
    opts: MinimizeOptions | None = None,
) -> MinimizeResult:
    """Best minimize() result over the given starts plus opts.restarts random ones.

    Callers pass the incumbent best-known point among the starts so the search
    always exploits near the current optimum. Deterministic given opts.seed.
    """
    opts = opts or MinimizeOptions()
    points = [space.clamp(np.asarray(s, dtype=float)) for s in starts]
    if not points and opts.restarts == 0:
        raise ValueError("multistart needs at least one start or one restart")
    if opts.restarts:
        rng = np.random.default_rng(opts.seed)
        points.extend(space.uniform(rng, opts.restarts))
    best = None
    for p in points:
        result = minimize(objective, gradient, space, p, opts)
        if best is None or result.f_min < best.f_min:
            best = result
    return best
