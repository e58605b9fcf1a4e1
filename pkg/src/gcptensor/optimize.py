"""Bound-constrained limited-memory quasi-Newton minimizer.

Minimizes F(x) subject to per-variable lower bounds (uppers are always
+inf), given an oracle returning (F, gradient).  The method is projected
L-BFGS: variables sitting at their bound with an inward-pointing gradient
are frozen for the step, the two-loop recursion builds a quasi-Newton
direction from the remaining ones, and a backtracking line search walks
the projected path x(a) = P(x + a d), so every iterate is feasible by
construction and accepted objective values never increase.

The line search brackets a step satisfying sufficient decrease along the
projected displacement, halving on a decrease failure and extending when
an interior step fails the curvature condition (too short to make the
memory useful); steps that hit a bound skip the curvature requirement.
If the trial budget runs out, the last point that passed the decrease
test is accepted, so objective values stay monotone either way.  The
curvature-pair memory additionally rejects updates whose s'y is not
safely positive.

Optimality is measured by || P(x - g) - x ||_inf, which is zero exactly
at bound-constrained stationary points.
"""

from __future__ import annotations

import enum
from collections import deque

import numpy as np

from .exceptions import NumericalError

__all__ = ["OptOptions", "OptTrace", "Status", "minimize"]


class Status(enum.Enum):
    """Why the optimizer stopped."""

    CONVERGED_GRAD = "converged_grad"
    CONVERGED_F = "converged_f"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILURE = "line_search_failure"


class OptOptions:
    """Solver controls.

    Parameters
    ----------
    memory : int, optional
        Number of curvature pairs kept.  Default 5.
    max_iters : int, optional
        Iteration cap.  Default 1000.
    grad_tol : float, optional
        Stop when the projected-gradient infinity norm falls below this.
        Default 1e-5.
    rel_f_tol : float, optional
        Stop when an accepted step changes F by less than this, relative
        to max(1, |F|).  Default 1e-9.
    suff_decrease : float, optional
        Line-search sufficient-decrease constant.  Default 1e-4.
    curvature : float, optional
        Curvature constant gating pair storage on interior steps.
        Default 0.9.
    max_line_search : int, optional
        Backtracking trials per direction.  Default 20.
    """

    def __init__(
        self,
        memory=5,
        max_iters=1000,
        grad_tol=1e-5,
        rel_f_tol=1e-9,
        suff_decrease=1e-4,
        curvature=0.9,
        max_line_search=20,
    ):
        self.memory = int(memory)
        self.max_iters = int(max_iters)
        self.grad_tol = float(grad_tol)
        self.rel_f_tol = float(rel_f_tol)
        self.suff_decrease = float(suff_decrease)
        self.curvature = float(curvature)
        self.max_line_search = int(max_line_search)
        if self.memory < 1 or self.max_iters < 1 or self.max_line_search < 1:
            raise ValueError("memory, max_iters, max_line_search must be >= 1")
        if self.grad_tol <= 0 or self.rel_f_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.suff_decrease < self.curvature < 1.0:
            raise ValueError("need 0 < suff_decrease < curvature < 1")

    def __repr__(self) -> str:
        return (
            f"OptOptions(memory={self.memory}, max_iters={self.max_iters}, "
            f"grad_tol={self.grad_tol}, rel_f_tol={self.rel_f_tol})"
        )


class OptTrace:
    """Per-iteration record of an optimization run.

    Row 0 holds the initial point with step length 0; each accepted
    iteration appends one row.  ``status`` is set when the run ends.
    """

    def __init__(self):
        self._f = []
        self._gnorm = []
        self._step = []
        self.status = None

    def append(self, f, grad_norm, step) -> None:
        self._f.append(float(f))
        self._gnorm.append(float(grad_norm))
        self._step.append(float(step))

    @property
    def objectives(self) -> np.ndarray:
        return np.array(self._f)

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array(self._gnorm)

    @property
    def steps(self) -> np.ndarray:
        return np.array(self._step)

    def __len__(self) -> int:
        return len(self._f)

    @property
    def n_iters(self) -> int:
        """Accepted iterations (excludes the initial-point row)."""
        return max(len(self._f) - 1, 0)

    def to_csv(self, path_or_file) -> None:
        """Write rows as CSV: iteration, objective, projected-gradient
        norm, step length."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w") if own else path_or_file
        try:
            fh.write("iteration,objective,projected_grad_norm,step\n")
            for i, (f, gn, st) in enumerate(zip(self._f, self._gnorm, self._step)):
                fh.write(f"{i},{f:.17g},{gn:.17g},{st:.17g}\n")
        finally:
            if own:
                fh.close()

    def __repr__(self) -> str:
        tail = f", F={self._f[-1]:.6g}" if self._f else ""
        return f"OptTrace(n_iters={self.n_iters}, status={self.status}{tail})"


def _evaluate(oracle, x, context):
    f, g = oracle(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"gradient shape {g.shape} does not match x {x.shape}")
    if not np.isfinite(f):
        raise NumericalError(f"objective is non-finite at {context}")
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"gradient has non-finite entries at {context}")
    return f, g


def _criticality(x, g, lb) -> float:
    return float(np.abs(np.maximum(x - g, lb) - x).max())


def _two_loop(g, pairs) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    if pairs:
        s, y, _ = pairs[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _line_search(oracle, x, f, g, d, lb, opts):
    """Find a step along the projected path x(a) = P(x + a d).

    Weak-Wolfe bracketing: a trial failing sufficient decrease shrinks
    the bracket from above; an interior trial failing the curvature
    condition extends it from below (the step is too short).  Trials
    that land on a bound are accepted on sufficient decrease alone.
    Non-finite trial objectives count as decrease failures, so the
    search backs away from overflow regions on its own.  Returns
    (x', f', g', step, interior) or None; if the trial budget runs out,
    the last decrease-passing point stands in.
    """
    lo, hi = 0.0, np.inf
    alpha = 1.0
    fallback = None
    for _ in range(opts.max_line_search):
        xt = np.maximum(x + alpha * d, lb)
        step = xt - x
        if not np.any(step != 0.0):
            # the whole step projected away: d points into the bounds
            return None
        ft, gt = oracle(xt)
        ft = float(ft)
        gd_step = float(g @ step)
        armijo = (
            np.isfinite(ft)
            and gd_step < 0.0
            and ft <= f + opts.suff_decrease * gd_step
        )
        if not armijo:
            hi = alpha
            alpha = 0.5 * (lo + hi)
            continue
        gt = np.asarray(gt, dtype=np.float64)
        if not np.all(np.isfinite(gt)):
            raise NumericalError(
                "gradient has non-finite entries at an accepted step"
            )
        interior = np.array_equal(xt, x + alpha * d)
        result = (xt, ft, gt, alpha, interior)
        if not interior or float(gt @ d) >= opts.curvature * float(g @ d):
            return result
        fallback = result
        lo = alpha
        alpha = 2.0 * alpha if np.isinf(hi) else 0.5 * (lo + hi)
    return fallback


def minimize(oracle, x0, lower=None, options=None):
    """Minimize F subject to x >= lower.

    Parameters
    ----------
    oracle : callable
        Maps a parameter vector to ``(F, gradient)``.
    x0 : array_like
        Starting point; projected onto the bounds if infeasible.
    lower : None, scalar, or array_like, optional
        Per-variable lower bounds; None means unconstrained.
    options : OptOptions, optional

    Returns
    -------
    (ndarray, OptTrace)
        The final iterate (the best accepted point) and the run trace.

    Raises
    ------
    NumericalError
        If the oracle returns non-finite values at the initial point or
        at an accepted step.
    """
    opts = options if options is not None else OptOptions()
    x = np.array(x0, dtype=np.float64).ravel()
    if lower is None:
        lb = np.full_like(x, -np.inf)
    else:
        lb = np.broadcast_to(np.asarray(lower, dtype=np.float64), x.shape).copy()
    x = np.maximum(x, lb)

    f, g = _evaluate(oracle, x, "the initial point")
    trace = OptTrace()
    trace.append(f, _criticality(x, g, lb), 0.0)
    pairs = deque(maxlen=opts.memory)
    status = Status.MAX_ITERS
    if _criticality(x, g, lb) <= opts.grad_tol:
        status = Status.CONVERGED_GRAD
        trace.status = status
        return x, trace

    for _ in range(opts.max_iters):
        active = (x <= lb) & (g > 0.0)
        gf = np.where(active, 0.0, g)
        d = -_two_loop(gf, pairs)
        d[active] = 0.0
        descent = float(d @ g)
        steepest = -gf
        if not np.all(np.isfinite(d)) or descent >= 0.0:
            d = steepest

        result = _line_search(oracle, x, f, g, d, lb, opts)
        if result is None and not np.array_equal(d, steepest):
            # quasi-Newton direction failed; retry with projected
            # steepest descent before giving up
            result = _line_search(oracle, x, f, g, steepest, lb, opts)
        if result is None:
            status = Status.LINE_SEARCH_FAILURE
            break

        xt, ft, gt, alpha, _ = result
        s = xt - x
        y = gt - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))

        f_prev = f
        x, f, g = xt, ft, gt
        trace.append(f, _criticality(x, g, lb), alpha)
        if _criticality(x, g, lb) <= opts.grad_tol:
            status = Status.CONVERGED_GRAD
            break
        if abs(f_prev - f) <= opts.rel_f_tol * max(1.0, abs(f_prev)):
            status = Status.CONVERGED_F
            break

    trace.status = status
    return x, trace
