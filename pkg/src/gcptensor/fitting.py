"""Fitting low-rank models to a problem: initialization and solver glue.

Flattens a Kruskal model into a parameter vector, pairs it with the
matching objective/gradient oracle, and hands both to the bound
constrained minimizer.  Returned models are normalized (unit-norm
columns, weights absorbed, components sorted), so the same underlying
model always prints the same way regardless of the run that found it.

Random initialization draws from a counter-based generator keyed by an
integer seed, so a (problem, seed) pair reproduces its fit bitwise.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np
from numpy.random import Generator, Philox

from .kruskal import KruskalTensor
from .objective import (
    FitProblem,
    gaussian_fast_value_and_grad,
    value_and_grad,
    weighted_value_and_grad,
)
from .optimize import OptOptions, minimize

__all__ = ["FitResult", "default_init", "fit_gcp", "fit_gcp_multistart"]


FitResult = namedtuple("FitResult", "model objective trace")
FitResult.__doc__ = """Outcome of one fit.

Fields
------
model : KruskalTensor
    Normalized, component-sorted fitted model.
objective : float
    Final objective value (regularization included).
trace : OptTrace
    Per-iteration solver record, status attached.
"""


def _random_init(shape, rank, nonnegative, seed) -> KruskalTensor:
    if int(rank) < 1:
        raise ValueError("rank must be at least 1")
    rng = Generator(Philox(int(seed)))
    factors = []
    for n in shape:
        if nonnegative:
            factors.append(rng.uniform(0.0, 1.0, size=(n, int(rank))))
        else:
            factors.append(0.1 * rng.standard_normal(size=(n, int(rank))))
    return KruskalTensor(factors)


def default_init(shape, rank, loss, seed=0) -> KruskalTensor:
    """Random starting model for a loss on a tensor of the given shape.

    Factor entries are uniform on (0, 1) when the loss constrains the
    model to be nonnegative, and 0.1 times standard normal otherwise.
    Deterministic in ``seed``.

    Parameters
    ----------
    shape : tuple of int
    rank : int
    loss : LossSpec
    seed : int, optional
    """
    return _random_init(shape, rank, loss.bounded, seed)


def _pack_grads(grads, gw=None) -> np.ndarray:
    parts = [g.ravel(order="F") for g in grads]
    if gw is not None:
        parts.append(gw)
    return np.concatenate(parts)


def _make_oracle(problem: FitProblem, weighted: bool):
    shape = problem.shape
    rank = problem.rank
    use_fast = (
        not weighted
        and problem.loss.name == "gaussian"
        and problem.implicit_weights
    )

    def oracle(v):
        m = KruskalTensor.from_vec(v, shape, rank, has_weights=weighted)
        if weighted:
            f, grads, gw = weighted_value_and_grad(problem, m)
            return f, _pack_grads(grads, gw)
        if use_fast:
            f, grads = gaussian_fast_value_and_grad(problem, m)
        else:
            f, grads = value_and_grad(problem, m)
        return f, _pack_grads(grads)

    return oracle


def _lower_bounds(problem: FitProblem, weighted: bool) -> np.ndarray:
    n_factor = sum(n * problem.rank for n in problem.shape)
    lb = np.full(n_factor + (problem.rank if weighted else 0),
                 problem.factor_lower_bound)
    if weighted:
        # weights must stay nonnegative whatever the loss allows
        lb[n_factor:] = 0.0
    return lb


def fit_gcp(problem: FitProblem, init=None, seed=0, options=None) -> FitResult:
    """Fit a rank-r model to a problem by bound-constrained minimization.

    Parameters
    ----------
    problem : FitProblem
    init : KruskalTensor, optional
        Starting model.  Must match the problem's shape and rank and be
        feasible.  When it carries a weight vector, the weights are
        optimized along with the factors (kept nonnegative); otherwise
        only factors are free.  Default: a random start from ``seed``.
    seed : int, optional
        Seed for the default initialization.  Ignored when ``init`` is
        given.
    options : OptOptions, optional

    Returns
    -------
    FitResult
        The fitted model is normalized and component-sorted; its
        objective equals the final trace row.
    """
    if init is None:
        init = _random_init(problem.shape, problem.rank, problem.nonnegative, seed)
    else:
        problem.check_model(init)
    weighted = init.weights is not None
    oracle = _make_oracle(problem, weighted)
    x, trace = minimize(
        oracle,
        init.to_vec(),
        lower=_lower_bounds(problem, weighted),
        options=options,
    )
    model = KruskalTensor.from_vec(
        x, problem.shape, problem.rank, has_weights=weighted
    ).normalize()
    return FitResult(model, float(trace.objectives[-1]), trace)


def fit_gcp_multistart(problem: FitProblem, seeds, options=None):
    """Fit once per seed and keep the lowest final objective.

    Parameters
    ----------
    problem : FitProblem
    seeds : iterable of int
    options : OptOptions, optional

    Returns
    -------
    (FitResult, list of (int, float))
        Best result, and every (seed, objective) pair in input order.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    best = None
    summary = []
    for s in seeds:
        result = fit_gcp(problem, seed=s, options=options)
        summary.append((s, result.objective))
        if best is None or result.objective < best.objective:
            best = result
    return best, summary
