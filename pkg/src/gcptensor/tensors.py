"""Dense and coordinate-format tensor building blocks.

Conventions used throughout the package:

* A dense d-way tensor is a plain :class:`numpy.ndarray` with ``ndim == d``.
* Vectorization order is first-mode-fastest: element ``(i_1, ..., i_d)``
  (0-based) maps to linear position ``sum_k i_k * prod_{l<k} n_l``.  This is
  Fortran ("F") ordering in numpy terms.  Textbook formulas are usually
  written 1-based; add 1 to our indices to compare.
* The mode-k unfolding is the ``n_k x (N / n_k)`` matrix whose row index is
  ``i_k`` and whose column index linearizes the remaining modes in
  increasing mode order, first of them fastest.
* Matrices are 2-D arrays indexed ``(row, col)``; memory layout is left to
  numpy and never relied upon.

All functions here are pure and all containers are immutable after
construction, so values can be shared freely between threads.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "linear_index",
    "multi_index",
    "all_indices",
    "unfold_index",
    "unfold",
    "fold",
    "vec",
    "khatri_rao",
    "hadamard",
    "CooTensor",
]


def _check_shape(shape) -> tuple:
    shape = tuple(int(n) for n in shape)
    if len(shape) < 1 or any(n < 1 for n in shape):
        raise ValueError(f"shape must have at least one mode of size >= 1, got {shape}")
    return shape


def linear_index(shape, index):
    """Map a multiindex to its position in the vectorized tensor.

    Both the multiindex and the result are 0-based; the classic 1-based
    formula ``i' = 1 + sum_k (i_k - 1) n'_k`` is recovered by adding 1.

    Parameters
    ----------
    shape : tuple of int
        Mode sizes ``(n_1, ..., n_d)``.
    index : sequence of int, or tuple of arrays
        A single multiindex ``(i_1, ..., i_d)``, or d arrays of per-mode
        indices for batch conversion.

    Returns
    -------
    int or ndarray
        Linear position(s) in ``range(prod(shape))``.

    Raises
    ------
    ValueError
        If any index is out of range for its mode.
    """
    shape = _check_shape(shape)
    try:
        out = np.ravel_multi_index(tuple(index), shape, order="F")
    except ValueError as exc:
        raise ValueError(f"multiindex {index} out of range for shape {shape}") from exc
    if out.ndim == 0:
        return int(out)
    return out


def multi_index(shape, lin):
    """Inverse of :func:`linear_index`: linear position(s) to multiindex arrays."""
    shape = _check_shape(shape)
    lin = np.asarray(lin)
    if np.any(lin < 0) or np.any(lin >= np.prod(shape)):
        raise ValueError(f"linear index out of range for shape {shape}")
    return np.unravel_index(lin, shape, order="F")


def all_indices(shape) -> np.ndarray:
    """All multiindices of ``shape`` as an ``(N, d)`` array in linear order."""
    shape = _check_shape(shape)
    total = int(np.prod(shape))
    return np.column_stack(multi_index(shape, np.arange(total)))


def unfold_index(shape, mode, index):
    """Position of a tensor element inside the mode-``mode`` unfolding.

    Parameters
    ----------
    shape : tuple of int
    mode : int
        0-based mode of the unfolding, in ``range(d)``.
    index : sequence of int
        0-based multiindex.

    Returns
    -------
    (row, col) : pair of int
        0-based matrix position; ``row`` is the mode-``mode`` index and
        ``col`` linearizes the remaining modes, lowest mode fastest.
    """
    shape = _check_shape(shape)
    mode = _check_mode(mode, len(shape))
    index = tuple(int(i) for i in index)
    if len(index) != len(shape):
        raise ValueError(f"multiindex {index} has wrong length for shape {shape}")
    rest_idx = index[:mode] + index[mode + 1 :]
    rest_shape = shape[:mode] + shape[mode + 1 :]
    row = index[mode]
    if not 0 <= row < shape[mode]:
        raise ValueError(f"multiindex {index} out of range for shape {shape}")
    if rest_shape:
        col = int(np.ravel_multi_index(rest_idx, rest_shape, order="F"))
    else:
        col = 0
    return row, col


def _check_mode(mode, ndim) -> int:
    mode = int(mode)
    if not 0 <= mode < ndim:
        raise ValueError(f"mode {mode} invalid for a {ndim}-way tensor")
    return mode


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of a dense tensor into an ``n_k x (N/n_k)`` matrix."""
    x = np.asarray(x)
    mode = _check_mode(mode, x.ndim)
    return np.moveaxis(x, mode, 0).reshape((x.shape[mode], -1), order="F")


def fold(mat: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold`; reassembles the tensor of the given shape."""
    shape = _check_shape(shape)
    mode = _check_mode(mode, len(shape))
    mat = np.asarray(mat)
    rest = shape[:mode] + shape[mode + 1 :]
    if mat.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(
            f"matrix of shape {mat.shape} is not a mode-{mode} unfolding of {shape}"
        )
    t = mat.reshape((shape[mode],) + rest, order="F")
    return np.moveaxis(t, 0, mode)


def vec(x: np.ndarray) -> np.ndarray:
    """Vectorize a tensor (or matrix) in first-mode-fastest order."""
    return np.asarray(x).ravel(order="F")


def khatri_rao(mats) -> np.ndarray:
    """Columnwise Kronecker product of a list of matrices.

    All inputs must share the same column count ``r``.  Column ``j`` of the
    result is ``kron(mats[0][:, j], ..., mats[-1][:, j])``, so the row index
    of the first matrix varies slowest.

    Parameters
    ----------
    mats : sequence of ndarray
        Matrices of size ``m_i x r``.

    Returns
    -------
    ndarray of shape (prod(m_i), r)
    """
    mats = [np.asarray(m) for m in mats]
    if not mats:
        raise ValueError("khatri_rao needs at least one matrix")
    if any(m.ndim != 2 for m in mats):
        raise ValueError("khatri_rao operands must be 2-D")
    r = mats[0].shape[1]
    if any(m.shape[1] != r for m in mats):
        cols = [m.shape[1] for m in mats]
        raise ValueError(f"column counts differ: {cols}")
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, r)
    return out


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two same-shaped matrices."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


class CooTensor:
    """Coordinate-format tensor: a list of (multiindex, value) pairs.

    Two observation semantics share this container, selected by ``scarce``:

    * ``scarce=False`` (sparse): every entry of the tensor is observed and
      unlisted entries are zero.
    * ``scarce=True``: only the listed entries are observed; everything else
      is missing, not zero.

    Duplicate indices are a construction error: the entry list represents a
    set of positions.

    Parameters
    ----------
    shape : tuple of int
    indices : ndarray of shape (s, d)
        0-based multiindices, one row per entry.
    values : ndarray of shape (s,)
    scarce : bool, default False

    Attributes
    ----------
    shape, indices, values, scarce
        As above; ``indices`` and ``values`` are read-only views.
    """

    def __init__(self, shape, indices, values, scarce: bool = False):
        self.shape = _check_shape(shape)
        d = len(self.shape)
        indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
        values = np.asarray(values, dtype=np.float64).ravel()
        if indices.size == 0:
            indices = indices.reshape(0, d)
        if indices.ndim != 2 or indices.shape[1] != d:
            raise ValueError(
                f"indices must be (s, {d}) for shape {self.shape}, got {indices.shape}"
            )
        if indices.shape[0] != values.shape[0]:
            raise ValueError(
                f"{indices.shape[0]} indices but {values.shape[0]} values"
            )
        if indices.size and (
            indices.min() < 0 or np.any(indices >= np.array(self.shape))
        ):
            raise ValueError(f"index out of range for shape {self.shape}")
        if indices.shape[0]:
            lin = np.ravel_multi_index(tuple(indices.T), self.shape, order="F")
            if np.unique(lin).size != lin.size:
                raise ValueError("duplicate multiindex in entry list")
        if not np.all(np.isfinite(values)):
            raise ValueError("entry values must be finite")
        indices.setflags(write=False)
        values.setflags(write=False)
        self.indices = indices
        self.values = values
        self.scarce = bool(scarce)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def nnz(self) -> int:
        """Number of stored entries."""
        return self.values.shape[0]

    @property
    def size(self) -> int:
        """Total number of positions, stored or not."""
        return int(np.prod(self.shape, dtype=np.int64))

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        """Scatter into a dense array; unlisted positions get ``fill``."""
        out = np.full(self.shape, float(fill), order="F")
        out[tuple(self.indices.T)] = self.values
        return out

    def __repr__(self) -> str:
        kind = "scarce" if self.scarce else "coo"
        return f"CooTensor(shape={self.shape}, nnz={self.nnz}, {kind})"
