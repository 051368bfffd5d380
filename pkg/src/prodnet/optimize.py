"""Derivative-free bound-constrained minimization (Powell's method).

The line search is clamped to the feasible step interval implied by the box
bounds, so no penalty terms ever enter the objective and iterates stay
feasible by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

GOLDEN = 0.3819660112501051  # 2 - golden ratio, Brent's section constant
DEFAULT_FTOL = 1e-10
DEFAULT_XTOL = 1e-11
BRACKET_STEP = 0.25
MAX_BRENT_ITER = 100


class _BudgetExhausted(Exception):
    """Internal: raised by the evaluation counter when max_evals is hit."""


@dataclass
class PowellResult:
    x: np.ndarray
    fun: float
    n_evals: int
    n_sweeps: int
    converged: bool


def _step_interval(x: np.ndarray, d: np.ndarray, lo: np.ndarray,
                   hi: np.ndarray) -> tuple[float, float]:
    """Feasible alpha range keeping x + alpha*d inside [lo, hi]."""
    amin, amax = -np.inf, np.inf
    for k in np.nonzero(d)[0]:
        below = (lo[k] - x[k]) / d[k]
        above = (hi[k] - x[k]) / d[k]
        if d[k] > 0:
            amin = max(amin, below)
            amax = min(amax, above)
        else:
            amin = max(amin, above)
            amax = min(amax, below)
    # alpha = 0 is always feasible for an in-box x; guard against roundoff.
    return min(amin, 0.0), max(amax, 0.0)


def _brent(g: Callable[[float], float], a: float, b: float, c: float,
           fb: float, xtol: float) -> tuple[float, float]:
    """Minimize g on [a, c] given an interior point b with g(b) = fb."""
    lo, hi = (a, c) if a < c else (c, a)
    x = w = v = b
    fx = fw = fv = fb
    d = e = 0.0
    for _ in range(MAX_BRENT_ITER):
        m = 0.5 * (lo + hi)
        tol1 = xtol * abs(x) + 1e-12
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (hi - lo):
            return x, fx
        use_golden = True
        if abs(e) > tol1:
            # parabolic fit through x, w, v
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            e_prev = e
            e = d
            if abs(p) < abs(0.5 * q * e_prev) and q * (lo - x) < p < q * (hi - x):
                d = p / q
                u = x + d
                if u - lo < tol2 or hi - u < tol2:
                    d = tol1 if x < m else -tol1
                use_golden = False
        if use_golden:
            e = (hi if x < m else lo) - x
            d = GOLDEN * e
        u = x + (d if abs(d) >= tol1 else (tol1 if d > 0 else -tol1))
        fu = g(u)
        if fu <= fx:
            if u >= x:
                lo = x
            else:
                hi = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                lo = u
            else:
                hi = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x, fx


def _line_minimize(g: Callable[[float], float], f0: float, amin: float,
                   amax: float, xtol: float) -> tuple[float, float]:
    """Minimize g(alpha) over [amin, amax] starting from alpha = 0.

    Returns (alpha, g(alpha)); (0, f0) when no improvement is found.
    """
    if amax - amin < 1e-15:
        return 0.0, f0

    def probe(side: float) -> tuple[list[float], list[float]] | None:
        # expand geometrically from 0 until g turns up or the bound is hit
        alphas = [0.0]
        values = [f0]
        step = BRACKET_STEP * side
        while True:
            a = min(max(step, amin), amax)
            if a == alphas[-1]:
                return None
            fa = g(a)
            alphas.append(a)
            values.append(fa)
            if fa >= values[-2]:
                return alphas, values
            if a in (amin, amax):
                return alphas, values
            step *= 2.0

    best_a, best_f = 0.0, f0
    for side in (1.0, -1.0):
        out = probe(side)
        if out is None:
            continue
        alphas, values = out
        k = int(np.argmin(values))
        if values[k] < best_f - 0.0:
            best_a, best_f = alphas[k], values[k]
        if k == 0 and len(alphas) >= 2:
            # immediate rise: the minimum may hide between -step and +step
            continue
        if 0 < k < len(alphas) - 1:
            a, fb = _brent(g, alphas[k - 1], alphas[k], alphas[k + 1],
                           values[k], xtol)
            if fb < best_f:
                best_a, best_f = a, fb
            break
        # monotone run into the bound: the bound is the minimizer
        if k == len(alphas) - 1:
            break
    else:
        # both sides rose immediately; polish inside the small bracket
        a_lo = max(amin, -BRACKET_STEP)
        a_hi = min(amax, BRACKET_STEP)
        if a_lo < 0.0 < a_hi:
            a, fb = _brent(g, a_lo, 0.0, a_hi, f0, xtol)
            if fb < best_f:
                best_a, best_f = a, fb
    return best_a, best_f


def powell_minimize(f: Callable[[np.ndarray], float], x0: Sequence[float],
                    lower_bounds: Sequence[float] | None = None,
                    upper_bounds: Sequence[float] | None = None,
                    ftol: float = DEFAULT_FTOL, xtol: float = DEFAULT_XTOL,
                    max_evals: int | None = None) -> PowellResult:
    """Powell conjugate-direction minimization inside a box.

    Args:
        f: objective, finite at x0.
        x0: starting point, projected into the box if needed.
        lower_bounds / upper_bounds: per-coordinate box, None = unbounded.
        ftol: relative objective improvement per full sweep below which the
            search stops.
        xtol: line-search coordinate tolerance.
        max_evals: hard evaluation budget; exhaustion returns the best point
            evaluated so far with converged = False.

    Returns:
        PowellResult with the best point found.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    lo = np.full(n, -np.inf) if lower_bounds is None else np.asarray(
        lower_bounds, dtype=float)
    hi = np.full(n, np.inf) if upper_bounds is None else np.asarray(
        upper_bounds, dtype=float)
    if (lo > hi).any():
        raise ValueError("lower bound exceeds upper bound")
    x = np.clip(x, lo, hi)
    if max_evals is None:
        max_evals = max(100_000, 4000 * n)
    max_evals = max(int(max_evals), 1)

    n_evals = 0
    best_x = x.copy()
    best_f = np.inf

    def call(pt: np.ndarray) -> float:
        nonlocal n_evals, best_x, best_f
        if n_evals >= max_evals:
            raise _BudgetExhausted
        n_evals += 1
        val = float(f(pt))
        if val < best_f:
            best_f = val
            best_x = pt.copy()
        return val

    fx = call(x)
    if not np.isfinite(fx):
        raise ValueError("objective not finite at the starting point")

    directions = [np.eye(n)[k] for k in range(n)]
    n_sweeps = 0
    converged = False

    try:
        while True:
            n_sweeps += 1
            x_start = x.copy()
            f_start = fx
            biggest_drop = 0.0
            biggest_idx = 0

            for k, d in enumerate(directions):
                if not d.any():
                    continue
                amin, amax = _step_interval(x, d, lo, hi)
                g = lambda a: call(np.clip(x + a * d, lo, hi))
                alpha, f_new = _line_minimize(g, fx, amin, amax, xtol)
                if f_new < fx:
                    if fx - f_new > biggest_drop:
                        biggest_drop = fx - f_new
                        biggest_idx = k
                    x = np.clip(x + alpha * d, lo, hi)
                    fx = f_new

            improvement = f_start - fx
            if improvement <= ftol * max(abs(f_start), abs(fx)) + 1e-300:
                converged = True
                break

            # Powell's direction-replacement test on the extrapolated point.
            extrap = np.clip(2.0 * x - x_start, lo, hi)
            f_extrap = call(extrap)
            if f_extrap < f_start:
                t = (2.0 * (f_start - 2.0 * fx + f_extrap)
                     * (f_start - fx - biggest_drop) ** 2
                     - biggest_drop * (f_start - f_extrap) ** 2)
                if t < 0.0:
                    new_dir = x - x_start
                    norm = np.linalg.norm(new_dir)
                    if norm > 1e-300:
                        amin, amax = _step_interval(x, new_dir, lo, hi)
                        g = lambda a: call(np.clip(x + a * new_dir, lo, hi))
                        alpha, f_new = _line_minimize(g, fx, amin, amax, xtol)
                        if f_new < fx:
                            x = np.clip(x + alpha * new_dir, lo, hi)
                            fx = f_new
                        directions.pop(biggest_idx)
                        directions.append(new_dir / norm)
    except _BudgetExhausted:
        x, fx = best_x, best_f

    return PowellResult(x=x, fun=fx, n_evals=n_evals, n_sweeps=n_sweeps,
                        converged=converged)
