"""Finite-difference verification of analytic gradients.

Central differences of the objective, taken one parameter at a time, are
compared against the analytic gradient.  Errors are normalized as
|analytic - numeric| / (1 + |analytic|), the same guard against tiny
denominators used for the loss catalog's derivative checks.

Each difference costs two full objective evaluations, so this is a
verification tool for small problems, not something to run inside a fit.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

from .kruskal import KruskalTensor
from .objective import FitProblem, value_and_grad, weighted_value_and_grad

__all__ = ["GradReport", "check_gradients", "random_interior_model"]

GradReport = namedtuple("GradReport", "mode_errors weight_error max_error")
GradReport.__doc__ = """Worst relative gradient error per parameter block.

Fields
------
mode_errors : list of float
    Maximum normalized error over each factor matrix's entries.
weight_error : float or None
    Same for the model weight vector, when the model carries one.
max_error : float
    Overall maximum.
"""


def random_interior_model(
    problem: FitProblem, seed, low=0.1, high=1.0, weighted=False
) -> KruskalTensor:
    """Random model safely inside the feasible region.

    Entries are uniform on [low, high], so nonnegativity bounds sit at
    least ``low`` away and central differences with step << low cannot
    step out of the feasible set.  With ``weighted=True`` the model also
    gets uniform weights from the same range.
    """
    rng = np.random.default_rng(seed)
    factors = [rng.uniform(low, high, size=(n, problem.rank)) for n in problem.shape]
    weights = rng.uniform(low, high, size=problem.rank) if weighted else None
    return KruskalTensor(factors, weights=weights)


def check_gradients(problem: FitProblem, model: KruskalTensor, step: float = 1e-6) -> GradReport:
    """Compare analytic factor (and weight) gradients to central differences.

    Parameters
    ----------
    problem : FitProblem
    model : KruskalTensor
        Evaluation point.  Must lie at least ``step`` inside the feasible
        region, or the shifted evaluations will be rejected.
    step : float, optional
        Central-difference half-width.

    Returns
    -------
    GradReport
    """
    weighted = model.weights is not None
    if weighted:
        _, grads, gw = weighted_value_and_grad(problem, model)
        analytic = np.concatenate([g.ravel(order="F") for g in grads] + [gw])
    else:
        _, grads = value_and_grad(problem, model)
        analytic = np.concatenate([g.ravel(order="F") for g in grads])

    base = model.to_vec()
    numeric = np.empty_like(analytic)
    for i in range(base.size):
        shifted = base.copy()
        shifted[i] = base[i] + step
        f_plus = _value_at(problem, model, shifted)
        shifted[i] = base[i] - step
        f_minus = _value_at(problem, model, shifted)
        numeric[i] = (f_plus - f_minus) / (2.0 * step)

    rel = np.abs(analytic - numeric) / (1.0 + np.abs(analytic))
    mode_errors = []
    pos = 0
    for n in problem.shape:
        block = n * problem.rank
        mode_errors.append(float(rel[pos : pos + block].max()))
        pos += block
    weight_error = float(rel[pos:].max()) if weighted else None
    return GradReport(mode_errors, weight_error, float(rel.max()))


def _value_at(problem, template, vec):
    m = KruskalTensor.from_vec(
        vec, template.shape, template.rank, has_weights=template.weights is not None
    )
    if m.weights is not None:
        return weighted_value_and_grad(problem, m)[0]
    return value_and_grad(problem, m)[0]
