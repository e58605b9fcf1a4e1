"""Input-conversion helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .losses import LossSpec
from .tensors import CooTensor

__all__ = ["as_data_tensor", "as_loss_spec", "split_nan_mask"]


def as_loss_spec(name, epsilon=None, delta=None, beta=None, failures=None) -> LossSpec:
    """Build a LossSpec from flat optional parameters.

    Only parameters actually supplied are forwarded, so LossSpec's own
    required/irrelevant-parameter validation produces the error messages.
    """
    kwargs = {}
    if epsilon is not None:
        kwargs["epsilon"] = epsilon
    if delta is not None:
        kwargs["delta"] = delta
    if beta is not None:
        kwargs["beta"] = beta
    if failures is not None:
        kwargs["failures"] = failures
    return LossSpec(name, **kwargs)


def as_data_tensor(x):
    """Coerce input to a float64 ndarray or pass a CooTensor through."""
    if isinstance(x, CooTensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 1:
        raise ValueError("data must have at least one mode")
    return arr


def split_nan_mask(x, mask):
    """Treat NaN entries of a dense tensor as unobserved.

    When ``x`` is dense, contains NaNs, and no mask was given, returns
    the non-NaN indicator as the mask.  A user-supplied mask is kept
    as is; if it marks a NaN entry as observed, problem construction
    rejects it downstream.
    """
    if isinstance(x, np.ndarray) and mask is None and np.isnan(x).any():
        return x, ~np.isnan(x)
    return x, mask
