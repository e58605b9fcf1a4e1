"""Generalized CP tensor decomposition under elementwise losses.

Fit a low-rank Kruskal model to a multiway array by minimizing the mean
of a pointwise loss over the observed entries, with optional missing-data
masks, nonnegativity constraints, and L2 regularization.  The gradient
is assembled from matricized-tensor Khatri-Rao products and driven by a
bound-constrained limited-memory quasi-Newton solver.

Entry points
------------
``GCPDecomposition``
    Scikit-learn style estimator; the most convenient interface.
``FitProblem`` + ``fit_gcp`` / ``fit_gcp_multistart``
    Functional interface with full control over losses, masks, weights,
    regularization, and solver options.
``gcptensor`` (console script)
    Command-line fitting, gradient audits, synthetic data, and the
    held-out prediction protocol.
"""

from .estimator import GCPDecomposition
from .exceptions import (
    CapacityError,
    DomainError,
    FeasibilityError,
    GCPError,
    NumericalError,
    ParseError,
)
from .fitting import FitResult, default_init, fit_gcp, fit_gcp_multistart
from .gradcheck import GradReport, check_gradients, random_interior_model
from .io import (
    Holdout,
    export_model,
    heldout_loglik,
    load_model,
    make_holdout,
    make_holdout_random,
    read_csv_coo,
    read_tensor,
    sample_from_model,
    write_tensor,
)
from .kruskal import KruskalTensor
from .losses import LOSS_NAMES, LossSpec
from .objective import (
    FitProblem,
    gaussian_fast_value_and_grad,
    mttkrp,
    value_and_grad,
    weighted_value_and_grad,
)
from .optimize import OptOptions, OptTrace, Status, minimize
from .tensors import CooTensor, khatri_rao, unfold

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "CooTensor",
    "DomainError",
    "FeasibilityError",
    "FitProblem",
    "FitResult",
    "GCPDecomposition",
    "GCPError",
    "GradReport",
    "Holdout",
    "KruskalTensor",
    "LOSS_NAMES",
    "LossSpec",
    "NumericalError",
    "OptOptions",
    "OptTrace",
    "ParseError",
    "Status",
    "check_gradients",
    "default_init",
    "export_model",
    "fit_gcp",
    "fit_gcp_multistart",
    "gaussian_fast_value_and_grad",
    "heldout_loglik",
    "khatri_rao",
    "load_model",
    "make_holdout",
    "make_holdout_random",
    "minimize",
    "mttkrp",
    "random_interior_model",
    "read_csv_coo",
    "read_tensor",
    "sample_from_model",
    "unfold",
    "value_and_grad",
    "weighted_value_and_grad",
    "write_tensor",
]
