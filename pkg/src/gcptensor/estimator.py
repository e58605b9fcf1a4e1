"""Scikit-learn style estimator wrapping the fitting pipeline.

GCPDecomposition follows the usual conventions: constructor arguments
are stored verbatim (so ``get_params``/``set_params``/``clone`` work),
all validation happens in ``fit``, and fitted state lives in trailing
underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .fitting import fit_gcp_multistart
from .objective import FitProblem
from .optimize import OptOptions
from .validation import as_data_tensor, as_loss_spec, split_nan_mask

__all__ = ["GCPDecomposition"]


class GCPDecomposition(BaseEstimator):
    """Low-rank tensor decomposition under a pluggable elementwise loss.

    Fits a rank-``n_components`` Kruskal model to a d-way data tensor by
    minimizing the mean elementwise loss over observed entries, with
    optional L2 regularization and nonnegativity constraints, using a
    bound-constrained limited-memory quasi-Newton solver.

    Parameters
    ----------
    n_components : int
        Rank of the fitted model.
    loss : str, default "gaussian"
        One of the loss-catalog names (see ``gcptensor.losses``).
    epsilon : float, optional
        Positivity shift used inside logarithms for the losses that
        need one; defaults to the loss catalog's 1e-10.
    delta : float, optional
        Transition width (huber only).
    beta : float, optional
        Divergence exponent (beta_div only).
    failures : float, optional
        Failure count (negbinom only).
    l2_reg : float or sequence of float, default 0.0
        L2 penalty weight, scalar or one value per mode.
    nonnegative : bool, optional
        Constrain factors to be nonnegative.  Default: whatever the
        loss requires.
    max_iter : int, default 1000
    gtol : float, default 1e-5
        Projected-gradient infinity-norm stopping tolerance.
    ftol : float, default 1e-9
        Relative objective-change stopping tolerance.
    memory : int, default 5
        Quasi-Newton history length.
    n_starts : int, default 1
        Number of random restarts; the lowest-objective run wins.
    random_state : int, default 0
        Seed of the first start; start i uses random_state + i.

    Attributes
    ----------
    model_ : KruskalTensor
        Fitted model, normalized and component-sorted.
    factors_ : list of ndarray
        Per-mode factor matrices of ``model_``.
    weights_ : ndarray
        Component weights of ``model_``, descending.
    objective_ : float
        Final objective of the best start.
    objectives_per_start_ : list of (int, float)
        (seed, final objective) for every start, in order.
    n_iter_ : int
        Accepted iterations of the best run.
    status_ : Status
        Why the best run stopped.
    trace_ : OptTrace
        Full per-iteration record of the best run.
    loss_spec_ : LossSpec
        The resolved loss.

    Examples
    --------
    >>> import numpy as np
    >>> from gcptensor.estimator import GCPDecomposition
    >>> rng = np.random.default_rng(0)
    >>> x = rng.poisson(3.0, size=(6, 5, 4)).astype(float)
    >>> est = GCPDecomposition(n_components=2, loss="poisson").fit(x)
    >>> est.reconstruct().shape
    (6, 5, 4)
    """

    def __init__(
        self,
        n_components=1,
        loss="gaussian",
        epsilon=None,
        delta=None,
        beta=None,
        failures=None,
        l2_reg=0.0,
        nonnegative=None,
        max_iter=1000,
        gtol=1e-5,
        ftol=1e-9,
        memory=5,
        n_starts=1,
        random_state=0,
    ):
        self.n_components = n_components
        self.loss = loss
        self.epsilon = epsilon
        self.delta = delta
        self.beta = beta
        self.failures = failures
        self.l2_reg = l2_reg
        self.nonnegative = nonnegative
        self.max_iter = max_iter
        self.gtol = gtol
        self.ftol = ftol
        self.memory = memory
        self.n_starts = n_starts
        self.random_state = random_state

    def fit(self, X, y=None, mask=None):
        """Fit the decomposition to a data tensor.

        Parameters
        ----------
        X : ndarray or CooTensor
            The data.  NaN entries of a dense array are treated as
            unobserved when no mask is given.
        y : ignored
        mask : ndarray of bool, CooTensor, or (n, d) index array, optional
            Observed positions; everything else carries zero weight.
        """
        X = as_data_tensor(X)
        X, mask = split_nan_mask(X, mask)
        loss = as_loss_spec(
            self.loss, self.epsilon, self.delta, self.beta, self.failures
        )
        if int(self.n_starts) < 1:
            raise ValueError("n_starts must be at least 1")
        problem = FitProblem(
            X,
            loss,
            rank=self.n_components,
            reg=self.l2_reg,
            mask=mask,
            nonnegative=self.nonnegative,
        )
        options = OptOptions(
            memory=self.memory,
            max_iters=self.max_iter,
            grad_tol=self.gtol,
            rel_f_tol=self.ftol,
        )
        seeds = [int(self.random_state) + i for i in range(int(self.n_starts))]
        best, summary = fit_gcp_multistart(problem, seeds, options)
        self.loss_spec_ = loss
        self.model_ = best.model
        self.factors_ = list(best.model.factors)
        self.weights_ = best.model.weights
        self.objective_ = best.objective
        self.objectives_per_start_ = summary
        self.trace_ = best.trace
        self.n_iter_ = best.trace.n_iters
        self.status_ = best.trace.status
        return self

    def predict(self, indices):
        """Model values at the given positions.

        A single index tuple returns a float; an (n, d) array returns
        the n model values.
        """
        check_is_fitted(self, "model_")
        idx = np.asarray(indices)
        if idx.ndim == 1:
            return self.model_.entry(tuple(int(i) for i in idx))
        return self.model_.entries_at(idx)

    def predict_proba(self, indices):
        """Success probabilities at the given positions.

        Only meaningful for losses with a probability interpretation
        (gaussian, bernoulli_odds, bernoulli_logit).
        """
        check_is_fitted(self, "model_")
        return self.loss_spec_.probability(self.predict(indices))

    def reconstruct(self) -> np.ndarray:
        """The fitted model densified to a full tensor."""
        check_is_fitted(self, "model_")
        return self.model_.full()

    def score(self, X=None, y=None) -> float:
        """Negative final objective, so higher is better."""
        check_is_fitted(self, "model_")
        return -self.objective_
