"""Objective and gradient kernel for generalized low-rank fitting.

The fitting objective on observed entries Omega is

    F(model) = sum_i w_i f(x_i, m_i) + sum_k (eta_k / 2) ||A_k||_F^2

where w is a nonnegative weight tensor (uniform 1/|Omega| unless the
caller supplies general weights), f the elementwise loss, and m_i the
model value.  Writing y_i = w_i df/dm(x_i, m_i), the factor gradients are
MTTKRPs of the derivative tensor y against the other factors, plus the
regularization term.

Two evaluation routes exist.  Fully observed dense data materializes the
dense model and a dense derivative tensor.  Any problem with an explicit
observed-entry list (a mask, general weights, or scarce data) flows
through one shared gather/scatter route over the observed indices, sorted
canonically; results are therefore bitwise identical across equivalent
representations, and values stored at unobserved positions can never
influence them.

A Gaussian specialization avoids the derivative tensor entirely via the
factor gram matrices, which is the route that makes large sparse
least-squares fits cheap.
"""

from __future__ import annotations

import string

import numpy as np

from .exceptions import FeasibilityError
from .kruskal import MAX_DENSE_ELEMENTS, KruskalTensor
from .losses import LossSpec
from .tensors import CooTensor, linear_index

__all__ = [
    "FitProblem",
    "mttkrp",
    "value_and_grad",
    "weighted_value_and_grad",
    "gaussian_fast_value_and_grad",
]

_RANK_AXIS = "z"
_MODE_LETTERS = string.ascii_lowercase[:25]


def _linearize(shape, idx) -> np.ndarray:
    # rows of an (s, d) index array to linear positions
    return np.asarray(linear_index(shape, tuple(idx.T)))


def _mttkrp_dense(y: np.ndarray, factors, mode: int) -> np.ndarray:
    letters = _MODE_LETTERS[: y.ndim]
    rest = [k for k in range(y.ndim) if k != mode]
    spec = (
        letters
        + ","
        + ",".join(letters[k] + _RANK_AXIS for k in rest)
        + "->"
        + letters[mode]
        + _RANK_AXIS
    )
    return np.einsum(spec, y, *[factors[k] for k in rest], optimize=True)


def _mttkrp_coo(shape, idx, vals, factors, mode: int) -> np.ndarray:
    r = factors[0].shape[1]
    rows = np.repeat(vals[:, None], r, axis=1)
    for k in range(len(shape)):
        if k != mode:
            rows *= factors[k][idx[:, k], :]
    out = np.empty((shape[mode], r))
    for j in range(r):
        out[:, j] = np.bincount(
            idx[:, mode], weights=rows[:, j], minlength=shape[mode]
        )
    return out


def mttkrp(y, m: KruskalTensor, mode: int) -> np.ndarray:
    """Matricized-tensor times Khatri-Rao product against a model's factors.

    Computes ``unfold(y, mode) @ zk(m, mode)`` without forming either
    operand.  Dense input runs a single contraction; COO input touches
    only stored entries, costing O(r d nnz).

    Parameters
    ----------
    y : ndarray or CooTensor
        Tensor matching the model's shape.
    m : KruskalTensor
    mode : int

    Returns
    -------
    ndarray of shape (m.shape[mode], m.rank)
    """
    d = m.order
    if not 0 <= mode < d:
        raise ValueError(f"mode {mode} invalid for a {d}-way model")
    if isinstance(y, CooTensor):
        if y.shape != m.shape:
            raise ValueError(f"shape mismatch: {y.shape} vs {m.shape}")
        return _mttkrp_coo(y.shape, y.indices, y.values, m.factors, mode)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != m.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {m.shape}")
    return _mttkrp_dense(y, m.factors, mode)


def _hadamard_gram(factors, skip=None) -> np.ndarray:
    """Hadamard product of the factor gram matrices, optionally skipping one."""
    r = factors[0].shape[1]
    out = np.ones((r, r))
    for k, a in enumerate(factors):
        if k != skip:
            out *= a.T @ a
    return out


def _realize_dense_deriv(loss: LossSpec, x, m_full, weight) -> np.ndarray:
    # sole site that materializes a dense derivative tensor; tests hook it
    return loss.deriv(x, m_full) * weight


class FitProblem:
    """A fitting instance: data, observation weights, loss, rank, bounds.

    Parameters
    ----------
    data : ndarray or CooTensor
        The data tensor.  A scarce ``CooTensor`` lists only the observed
        entries; a non-scarce one is a sparse but fully observed tensor.
        Dense arrays may hold arbitrary values (even NaN) at positions a
        mask excludes; such values are validated against nothing and
        influence nothing.
    loss : LossSpec
    rank : int
    reg : float or sequence of float, optional
        L2 penalty strength per mode (a scalar is broadcast).  Applies to
        factor matrices only, never to model weights.
    mask : ndarray of bool or array of shape (s, d), optional
        Observed positions of a dense tensor, as a boolean array or an
        integer index list.  Mutually exclusive with ``weights``.
    weights : ndarray or CooTensor, optional
        General nonnegative per-entry weights.  A dense array marks
        entries with zero weight as unobserved; a ``CooTensor`` lists
        observed indices explicitly (zero values allowed).
    nonnegative : bool, optional
        Constrain factors to be nonnegative.  Default: exactly when the
        loss requires a nonnegative model.  Passing False for such a loss
        is an error.

    Notes
    -----
    Observed data values are validated against the loss's data domain
    here, once.  Observed index lists are stored sorted by linear index,
    so every representation of the same observation pattern evaluates in
    the same order.
    """

    def __init__(self, data, loss, rank, reg=0.0, mask=None, weights=None, nonnegative=None):
        if not isinstance(loss, LossSpec):
            raise TypeError("loss must be a LossSpec")
        if mask is not None and weights is not None:
            raise ValueError("pass either mask or weights, not both")
        rank = int(rank)
        if rank < 1:
            raise ValueError("rank must be at least 1")

        if isinstance(data, CooTensor):
            shape = data.shape
        else:
            data = np.asarray(data, dtype=np.float64)
            if data.ndim < 1:
                raise ValueError("data must have at least one mode")
            shape = data.shape
        d = len(shape)
        self.data = data
        self.shape = tuple(shape)
        self.total = int(np.prod(shape, dtype=np.int64))
        self.loss = loss
        self.rank = rank

        reg = np.asarray(reg, dtype=np.float64)
        if reg.ndim == 0:
            reg = np.full(d, float(reg))
        if reg.shape != (d,):
            raise ValueError(f"reg must be a scalar or length-{d} sequence")
        if np.any(reg < 0) or not np.all(np.isfinite(reg)):
            raise ValueError("reg must be finite and nonnegative")
        self.reg = reg
        self.reg.setflags(write=False)

        if nonnegative is None:
            nonnegative = loss.bounded
        elif not nonnegative and loss.bounded:
            raise FeasibilityError(
                f"the {loss.name} loss requires a nonnegative model; "
                "factors cannot be unconstrained"
            )
        self.nonnegative = bool(nonnegative)
        self.factor_lower_bound = 0.0 if self.nonnegative else float("-inf")

        idx, wvals = self._resolve_observations(mask, weights)
        if idx is None:
            # fully observed, uniform weight 1/total on every entry
            self.obs_indices = None
            self.obs_weights = None
            self.obs_values = None
            self.nobs = self.total
            if isinstance(data, CooTensor):
                # validate without densifying: stored values, plus the
                # implicit zeros if any entry is unstored
                loss.check_data(data.values)
                if data.nnz < self.total:
                    loss.check_data(np.zeros(1))
            else:
                loss.check_data(data)
        else:
            order = np.argsort(_linearize(self.shape, idx), kind="stable")
            idx = np.ascontiguousarray(idx[order])
            wvals = np.ascontiguousarray(wvals[order])
            idx.setflags(write=False)
            wvals.setflags(write=False)
            self.obs_indices = idx
            self.obs_weights = wvals
            self.obs_values = self._gather_data(idx)
            self.obs_values.setflags(write=False)
            self.nobs = idx.shape[0]
            loss.check_data(self.obs_values)
        self._dense_cache = None
        self._sum_sq_cache = None

    # -- construction helpers -------------------------------------------------

    def _resolve_observations(self, mask, weights):
        """Return (indices, weight values), or (None, None) for implicit."""
        d = len(self.shape)
        if mask is not None:
            if isinstance(mask, CooTensor):
                if mask.shape != self.shape:
                    raise ValueError("mask shape must match data")
                idx = mask.indices
            else:
                mask = np.asarray(mask)
                if mask.dtype == bool:
                    if mask.shape != self.shape:
                        raise ValueError("boolean mask shape must match data")
                    idx = np.argwhere(mask)
                else:
                    idx = np.asarray(mask, dtype=np.int64)
                    if idx.ndim != 2 or idx.shape[1] != d:
                        raise ValueError(f"index mask must have shape (s, {d})")
            if idx.shape[0] == 0:
                raise ValueError("mask selects no entries")
            self._check_indices(idx)
            return idx, np.full(idx.shape[0], 1.0 / idx.shape[0])
        if weights is not None:
            if isinstance(weights, CooTensor):
                if weights.shape != self.shape:
                    raise ValueError("weight tensor shape must match data")
                idx, w = weights.indices, weights.values
            else:
                weights = np.asarray(weights, dtype=np.float64)
                if weights.shape != self.shape:
                    raise ValueError("weight array shape must match data")
                if np.any(weights < 0) or not np.all(np.isfinite(weights)):
                    raise ValueError("weights must be finite and nonnegative")
                idx = np.argwhere(weights > 0)
                w = weights[weights > 0]
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and nonnegative")
            if idx.shape[0] == 0:
                raise ValueError("weights select no entries")
            return np.asarray(idx, dtype=np.int64), np.asarray(w, dtype=np.float64)
        if isinstance(self.data, CooTensor) and self.data.scarce:
            idx = self.data.indices
            return idx, np.full(idx.shape[0], 1.0 / idx.shape[0])
        return None, None

    def _check_indices(self, idx):
        shape = np.array(self.shape)
        if idx.min(initial=0) < 0 or np.any(idx >= shape):
            raise ValueError(f"observed index out of range for shape {self.shape}")
        lin = _linearize(self.shape, idx)
        if np.unique(lin).size != lin.size:
            raise ValueError("duplicate observed index in mask")

    def _gather_data(self, idx):
        if isinstance(self.data, CooTensor):
            if self.data.scarce:
                lin_data = _linearize(self.data.shape, self.data.indices)
                lin_want = _linearize(self.shape, idx)
                order = np.argsort(lin_data, kind="stable")
                pos = np.searchsorted(lin_data[order], lin_want)
                pos = np.clip(pos, 0, len(lin_data) - 1)
                if not np.array_equal(lin_data[order][pos], lin_want):
                    raise ValueError(
                        "observation list includes positions the scarce data "
                        "does not store"
                    )
                return np.asarray(self.data.values[order][pos], dtype=np.float64)
            return self._dense_data()[tuple(idx.T)]
        return self.data[tuple(idx.T)]

    # -- data access ----------------------------------------------------------

    @property
    def order(self) -> int:
        return len(self.shape)

    @property
    def implicit_weights(self) -> bool:
        """True when every entry is observed with uniform weight."""
        return self.obs_indices is None

    def _dense_data(self) -> np.ndarray:
        if isinstance(self.data, CooTensor):
            if self._dense_cache is None:
                if self.total > MAX_DENSE_ELEMENTS:
                    raise FeasibilityError(
                        "data too large to densify for the generic route"
                    )
                self._dense_cache = self.data.to_dense()
            return self._dense_cache
        return self.data

    def _sum_sq(self) -> float:
        if self._sum_sq_cache is None:
            if isinstance(self.data, CooTensor):
                self._sum_sq_cache = float(np.sum(self.data.values**2))
            else:
                self._sum_sq_cache = float(np.sum(self.data**2))
        return self._sum_sq_cache

    def check_model(self, m: KruskalTensor) -> None:
        """Validate that a model is compatible and feasible for this problem."""
        if m.shape != self.shape:
            raise ValueError(f"model shape {m.shape} does not match data {self.shape}")
        if m.rank != self.rank:
            raise ValueError(f"model rank {m.rank} does not match problem rank {self.rank}")
        if self.nonnegative:
            for k, a in enumerate(m.factors):
                if np.any(a < 0):
                    raise FeasibilityError(
                        f"factor {k} has negative entries but the problem "
                        "requires a nonnegative model"
                    )
            if m.weights is not None and np.any(m.weights < 0):
                raise FeasibilityError("model weights must be nonnegative")

    def __repr__(self) -> str:
        obs = "all" if self.implicit_weights else str(self.nobs)
        return (
            f"FitProblem(shape={self.shape}, loss={self.loss.name!r}, "
            f"rank={self.rank}, observed={obs})"
        )


def _model_values_at(m: KruskalTensor, idx, nobs, total):
    # crossover: materializing the full model wins once most entries are
    # needed and it fits the dense budget
    if nobs > total // 2 and total <= MAX_DENSE_ELEMENTS:
        return m.full()[tuple(idx.T)]
    return m.entries_at(idx)


def _reg_value(problem, m) -> float:
    out = 0.0
    for eta, a in zip(problem.reg, m.factors):
        if eta != 0.0:
            out += 0.5 * eta * float(np.sum(a * a))
    return out


def value_and_grad(problem: FitProblem, m: KruskalTensor, return_deriv_tensor=False):
    """Objective value and factor gradients at a (weightless) model.

    Parameters
    ----------
    problem : FitProblem
    m : KruskalTensor
        Must not carry an explicit weight vector; use
        :func:`weighted_value_and_grad` for that case.
    return_deriv_tensor : bool, optional
        Also return the realized derivative tensor (ndarray for the dense
        route, CooTensor for the observed-list route).  Intended for
        inspection and tests.

    Returns
    -------
    (float, list of ndarray), or (float, list of ndarray, deriv tensor)
    """
    if m.weights is not None:
        raise ValueError(
            "model carries explicit weights; use weighted_value_and_grad"
        )
    problem.check_model(m)
    loss = problem.loss
    if problem.implicit_weights:
        x = problem._dense_data()
        mfull = m.full()
        w = 1.0 / problem.total
        f = float(np.sum(loss.value(x, mfull)) * w) + _reg_value(problem, m)
        y = _realize_dense_deriv(loss, x, mfull, w)
        grads = [
            _mttkrp_dense(y, m.factors, k) for k in range(problem.order)
        ]
        deriv = y
    else:
        idx = problem.obs_indices
        mvals = _model_values_at(m, idx, problem.nobs, problem.total)
        f = float(
            np.sum(problem.obs_weights * loss.value(problem.obs_values, mvals))
        ) + _reg_value(problem, m)
        yvals = problem.obs_weights * loss.deriv(problem.obs_values, mvals)
        grads = [
            _mttkrp_coo(problem.shape, idx, yvals, m.factors, k)
            for k in range(problem.order)
        ]
        deriv = None
        if return_deriv_tensor:
            deriv = CooTensor(problem.shape, idx, yvals, scarce=True)
    for k, eta in enumerate(problem.reg):
        if eta != 0.0:
            grads[k] = grads[k] + eta * m.factors[k]
    if return_deriv_tensor:
        return f, grads, deriv
    return f, grads


def weighted_value_and_grad(problem: FitProblem, m: KruskalTensor):
    """Objective, factor gradients, and weight gradient for a weighted model.

    The factor gradients pick up a diag(weights) on the right; the weight
    gradient is the derivative tensor contracted against every factor,
    component by component.

    Returns
    -------
    (float, list of ndarray, ndarray of shape (r,))
    """
    if m.weights is None:
        raise ValueError("model has no weight vector; use value_and_grad")
    problem.check_model(m)
    loss = problem.loss
    if problem.implicit_weights:
        x = problem._dense_data()
        mfull = m.full()
        w = 1.0 / problem.total
        f = float(np.sum(loss.value(x, mfull)) * w) + _reg_value(problem, m)
        y = _realize_dense_deriv(loss, x, mfull, w)
        raw = [_mttkrp_dense(y, m.factors, k) for k in range(problem.order)]
        letters = _MODE_LETTERS[: problem.order]
        spec = (
            letters
            + ","
            + ",".join(c + _RANK_AXIS for c in letters)
            + "->"
            + _RANK_AXIS
        )
        gw = np.einsum(spec, y, *m.factors, optimize=True)
    else:
        idx = problem.obs_indices
        mvals = _model_values_at(m, idx, problem.nobs, problem.total)
        f = float(
            np.sum(problem.obs_weights * loss.value(problem.obs_values, mvals))
        ) + _reg_value(problem, m)
        yvals = problem.obs_weights * loss.deriv(problem.obs_values, mvals)
        raw = [
            _mttkrp_coo(problem.shape, idx, yvals, m.factors, k)
            for k in range(problem.order)
        ]
        rows = np.repeat(yvals[:, None], m.rank, axis=1)
        for k in range(problem.order):
            rows *= m.factors[k][idx[:, k], :]
        gw = rows.sum(axis=0)
    grads = [g * m.weights for g in raw]
    for k, eta in enumerate(problem.reg):
        if eta != 0.0:
            grads[k] = grads[k] + eta * m.factors[k]
    return f, grads, gw


def gaussian_fast_value_and_grad(problem: FitProblem, m: KruskalTensor):
    """Gaussian-loss objective and gradients via gram matrices.

    Exploits the least-squares structure: gradients need only MTTKRPs of
    the raw data plus Hadamard products of factor grams, so neither the
    dense model nor a derivative tensor is ever formed.  Sparse data uses
    the stored-entry MTTKRP route.  The 2/total factor translates the
    unscaled least-squares gradient to the mean objective used everywhere
    else; agreement with :func:`value_and_grad` is exact to roundoff.

    Only valid for the gaussian loss with every entry observed.
    """
    if problem.loss.name != "gaussian":
        raise ValueError("fast path requires the gaussian loss")
    if not problem.implicit_weights:
        raise ValueError("fast path requires fully observed data")
    if m.weights is not None:
        raise ValueError(
            "model carries explicit weights; use weighted_value_and_grad"
        )
    problem.check_model(m)
    factors = m.factors
    d = problem.order
    total = problem.total
    grams = [a.T @ a for a in factors]

    if isinstance(problem.data, CooTensor):
        data_mttkrp = [
            _mttkrp_coo(
                problem.shape,
                problem.data.indices,
                problem.data.values,
                factors,
                k,
            )
            for k in range(d)
        ]
    else:
        data_mttkrp = [
            _mttkrp_dense(problem.data, factors, k) for k in range(d)
        ]

    # ||X - M||^2 = sum(x^2) - 2 <X, M> + ||M||^2, with <X, M> read off
    # the mode-0 MTTKRP and ||M||^2 from the all-mode gram product
    inner = float(np.sum(data_mttkrp[0] * factors[0]))
    gram_all = np.ones_like(grams[0])
    for g in grams:
        gram_all *= g
    norm_m_sq = float(np.sum(gram_all))
    f = (problem._sum_sq() - 2.0 * inner + norm_m_sq) / total
    f += _reg_value(problem, m)

    grads = []
    for k in range(d):
        gram_k = np.ones_like(grams[0])
        for j in range(d):
            if j != k:
                gram_k *= grams[j]
        g = (2.0 / total) * (factors[k] @ gram_k - data_mttkrp[k])
        if problem.reg[k] != 0.0:
            g = g + problem.reg[k] * factors[k]
        grads.append(g)
    return f, grads
