"""Kruskal (CP-structured) model tensors.

A Kruskal tensor of order d and rank r is a list of factor matrices
``A_1 (n_1 x r), ..., A_d (n_d x r)`` plus an optional nonnegative
component weight vector ``lam`` of length r.  Entry ``(i_1, ..., i_d)`` of
the model is ``sum_j lam[j] * prod_k A_k[i_k, j]`` with ``lam == 1`` when
absent.

No sign convention is imposed on normalized columns, so models that agree
up to per-column sign flips compare as different parameter values even
though they represent the same tensor.
"""

from __future__ import annotations

import string
import warnings

import numpy as np

from .exceptions import CapacityError
from .tensors import khatri_rao, vec

__all__ = ["KruskalTensor"]

# Budget for dense materialization, in output elements.
MAX_DENSE_ELEMENTS = 2**26

_MODE_LETTERS = string.ascii_lowercase[:25]  # 'z' is reserved for the rank axis


class KruskalTensor:
    """Low-rank model stored as factor matrices and optional weights.

    Parameters
    ----------
    factors : sequence of ndarray
        Matrices of size ``n_k x r`` sharing the column count ``r >= 1``.
    weights : ndarray of shape (r,), optional
        Nonnegative component weights.  Zero weights are permitted (they
        arise for degenerate zero columns) but negative ones are not.

    Attributes
    ----------
    factors : list of ndarray
        Read-only factor matrices.
    weights : ndarray or None
    """

    def __init__(self, factors, weights=None):
        factors = [np.array(a, dtype=np.float64) for a in factors]
        if not factors:
            raise ValueError("need at least one factor matrix")
        if any(a.ndim != 2 for a in factors):
            raise ValueError("factor matrices must be 2-D")
        r = factors[0].shape[1]
        if r < 1:
            raise ValueError("rank must be at least 1")
        if any(a.shape[1] != r for a in factors):
            raise ValueError(
                f"factor column counts differ: {[a.shape[1] for a in factors]}"
            )
        if len(factors) > len(_MODE_LETTERS):
            raise ValueError(f"at most {len(_MODE_LETTERS)} modes supported")
        if weights is not None:
            weights = np.array(weights, dtype=np.float64).ravel()
            if weights.shape != (r,):
                raise ValueError(f"weights must have length {r}, got {weights.shape}")
            if np.any(weights < 0) or not np.all(np.isfinite(weights)):
                raise ValueError("weights must be finite and nonnegative")
            weights.setflags(write=False)
        for a in factors:
            a.setflags(write=False)
        self.factors = factors
        self.weights = weights

    @property
    def order(self) -> int:
        """Number of modes d."""
        return len(self.factors)

    @property
    def rank(self) -> int:
        """Number of components r."""
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple:
        return tuple(a.shape[0] for a in self.factors)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def _lam(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.rank)
        return self.weights

    def entry(self, index) -> float:
        """Model value at one multiindex (0-based)."""
        return float(self.entries_at(np.asarray(index).reshape(1, -1))[0])

    def entries_at(self, indices) -> np.ndarray:
        """Model values at a batch of multiindices.

        Parameters
        ----------
        indices : ndarray of shape (s, d)
            0-based multiindices.

        Returns
        -------
        ndarray of shape (s,)
        """
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 2 or indices.shape[1] != self.order:
            raise ValueError(
                f"indices must be (s, {self.order}), got {indices.shape}"
            )
        if indices.size == 0:
            return np.zeros(0)
        shape = np.array(self.shape)
        if indices.min() < 0 or np.any(indices >= shape):
            raise ValueError(f"multiindex out of range for shape {self.shape}")
        rows = self.factors[0][indices[:, 0], :].copy()
        for k in range(1, self.order):
            rows *= self.factors[k][indices[:, k], :]
        return rows @ self._lam()

    def full(self, max_elements: int = MAX_DENSE_ELEMENTS) -> np.ndarray:
        """Materialize the dense model tensor.

        Raises
        ------
        CapacityError
            If the tensor would exceed ``max_elements`` entries.
        """
        if self.size > max_elements:
            raise CapacityError(
                f"dense model of shape {self.shape} has {self.size} elements, "
                f"budget is {max_elements}"
            )
        letters = _MODE_LETTERS[: self.order]
        spec = "z," + ",".join(f"{c}z" for c in letters) + "->" + letters
        return np.einsum(spec, self._lam(), *self.factors, optimize=True)

    def unfold(self, mode: int) -> np.ndarray:
        """Mode-``mode`` unfolding ``A_k diag(lam) Z_k'`` without densifying."""
        zk = self.zk(mode)
        ak = self.factors[mode]
        if self.weights is not None:
            ak = ak * self.weights
        return ak @ zk.T

    def zk(self, mode: int) -> np.ndarray:
        """Khatri-Rao product of all factors except ``mode``.

        The product runs over modes d, d-1, ..., skipping ``mode``, ..., 1,
        which makes the lowest remaining mode's row index vary fastest and
        matches the unfolding column order.
        """
        d = self.order
        if not 0 <= mode < d:
            raise ValueError(f"mode {mode} invalid for a {d}-way model")
        rest = [self.factors[k] for k in reversed(range(d)) if k != mode]
        if not rest:
            return np.ones((1, self.rank))
        return khatri_rao(rest)

    def normalize(self) -> "KruskalTensor":
        """Rescale columns to unit 2-norm, absorbing magnitudes into weights.

        Components are sorted by descending weight, ties broken by the
        lexicographic order of the first factor's column.  A zero column
        gets weight 0 and is left as zeros (with a warning).  The
        represented tensor is unchanged.
        """
        lam = self._lam().copy()
        factors = [a.copy() for a in self.factors]
        for a in factors:
            norms = np.linalg.norm(a, axis=0)
            zero = norms == 0.0
            if np.any(zero):
                warnings.warn(
                    "zero factor column during normalization; weight set to 0",
                    stacklevel=2,
                )
            lam *= norms
            a /= np.where(zero, 1.0, norms)
        order = sorted(
            range(self.rank), key=lambda j: (-lam[j], tuple(factors[0][:, j]))
        )
        return KruskalTensor(
            [a[:, order] for a in factors], weights=lam[order]
        )

    def absorb_weights(self, mode: int = 0) -> "KruskalTensor":
        """Fold the weight vector into one factor, returning a weightless model."""
        if self.weights is None:
            return self
        factors = list(self.factors)
        factors[mode] = factors[mode] * self.weights
        return KruskalTensor(factors)

    def to_vec(self) -> np.ndarray:
        """Stack ``vec(A_1); ...; vec(A_d)`` (column-major), then weights if any.

        This is the flattening handed to vector-based optimizers; factor
        gradients use the same layout.
        """
        parts = [vec(a) for a in self.factors]
        if self.weights is not None:
            parts.append(self.weights)
        return np.concatenate(parts)

    @classmethod
    def from_vec(cls, v, shape, rank: int, has_weights: bool = False) -> "KruskalTensor":
        """Inverse of :meth:`to_vec` for the given shape and rank."""
        v = np.asarray(v, dtype=np.float64).ravel()
        shape = tuple(int(n) for n in shape)
        rank = int(rank)
        expect = rank * sum(shape) + (rank if has_weights else 0)
        if v.shape[0] != expect:
            raise ValueError(
                f"vector of length {v.shape[0]} does not match "
                f"shape {shape}, rank {rank}, has_weights={has_weights} "
                f"(expected {expect})"
            )
        factors = []
        pos = 0
        for n in shape:
            factors.append(v[pos : pos + n * rank].reshape((n, rank), order="F"))
            pos += n * rank
        weights = v[pos:] if has_weights else None
        return cls(factors, weights=weights)

    def __repr__(self) -> str:
        w = "weighted" if self.weights is not None else "unweighted"
        return f"KruskalTensor(shape={self.shape}, rank={self.rank}, {w})"
