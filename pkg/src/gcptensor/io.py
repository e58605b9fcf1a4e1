"""Text tensor files, factor CSV export, sampling, and holdout splits.

Tensor file grammar (one tensor per file)::

    gcptns v1 <storage> <d> <n1> ... <nd>
    <payload>

where storage is ``dense`` (payload: whitespace-separated values in
linear index order, first mode fastest), ``coo`` (one ``i1 ... id value``
line per stored entry, 1-based indices, unstored entries are zero), or
``scarce`` (same line format, but unstored entries are unobserved rather
than zero).  Values are written with 17 significant digits, so a
write/read round trip reproduces every double bit for bit.  Writers
stage output in a temporary file and rename it into place, so a crashed
write never leaves a half-written artifact behind.

Factor export writes one ``factor_k.csv`` per mode (n_k rows by r
columns, 1-based k) plus ``lambda.csv`` with one weight per line.

Sampling draws i.i.d. entries whose distribution has mean equal to the
model entry, using a counter-based generator (Philox) keyed by the seed,
so every draw is reproducible across platforms and runs.
"""

from __future__ import annotations

import os
import tempfile
from collections import namedtuple

import numpy as np
from numpy.random import Generator, Philox

from .exceptions import DomainError, ParseError
from .kruskal import KruskalTensor
from .tensors import CooTensor

__all__ = [
    "Holdout",
    "atomic_write_text",
    "export_model",
    "heldout_loglik",
    "load_model",
    "make_holdout",
    "make_holdout_random",
    "read_csv_coo",
    "read_tensor",
    "sample_from_model",
    "write_tensor",
]

_MAGIC = "gcptns"
_VERSION = "v1"
_STORAGES = ("dense", "coo", "scarce")


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(t, path) -> None:
    """Write a dense array or CooTensor to a tensor file.

    The storage kind follows the argument: ndarray becomes ``dense``,
    CooTensor becomes ``coo`` or ``scarce`` per its flag.
    """
    lines = []
    if isinstance(t, CooTensor):
        storage = "scarce" if t.scarce else "coo"
        dims = " ".join(str(n) for n in t.shape)
        lines.append(f"{_MAGIC} {_VERSION} {storage} {t.ndim} {dims}")
        for row, v in zip(t.indices, t.values):
            idx = " ".join(str(i + 1) for i in row)
            lines.append(f"{idx} {_fmt(v)}")
    else:
        arr = np.asarray(t, dtype=np.float64)
        dims = " ".join(str(n) for n in arr.shape)
        lines.append(f"{_MAGIC} {_VERSION} dense {arr.ndim} {dims}")
        for v in arr.ravel(order="F"):
            lines.append(_fmt(v))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_header(line: str):
    parts = line.split()
    if len(parts) < 4 or parts[0] != _MAGIC or parts[1] != _VERSION:
        raise ParseError(f"expected header '{_MAGIC} {_VERSION} ...'", line=1)
    storage = parts[2]
    if storage not in _STORAGES:
        raise ParseError(f"unknown storage kind {storage!r}", line=1)
    try:
        ndim = int(parts[3])
        shape = tuple(int(p) for p in parts[4:])
    except ValueError:
        raise ParseError("header order and dims must be integers", line=1)
    if ndim < 1 or len(shape) != ndim:
        raise ParseError(
            f"header declares order {ndim} but lists {len(shape)} dims", line=1
        )
    if any(n < 1 for n in shape):
        raise ParseError("dims must be positive", line=1)
    return storage, shape


def read_tensor(path):
    """Read a tensor file; returns ndarray (dense) or CooTensor (coo/scarce)."""
    with open(path) as fh:
        raw = fh.read().split("\n")
    if not raw or not raw[0].strip():
        raise ParseError("empty file", line=1)
    storage, shape = _parse_header(raw[0])
    body = [(i + 2, line) for i, line in enumerate(raw[1:]) if line.strip()]
    if storage == "dense":
        total = int(np.prod(shape))
        values = []
        for lineno, line in body:
            for tok in line.split():
                try:
                    values.append(float(tok))
                except ValueError:
                    raise ParseError(f"bad value {tok!r}", line=lineno)
        if len(values) != total:
            raise ParseError(
                f"dense payload has {len(values)} values, shape needs {total}"
            )
        return np.array(values).reshape(shape, order="F")
    ndim = len(shape)
    indices = []
    values = []
    for lineno, line in body:
        parts = line.split()
        if len(parts) != ndim + 1:
            raise ParseError(
                f"expected {ndim} indices and a value, got {len(parts)} fields",
                line=lineno,
            )
        try:
            idx = [int(p) for p in parts[:ndim]]
            val = float(parts[ndim])
        except ValueError:
            raise ParseError("bad index or value", line=lineno)
        if any(not 1 <= i <= n for i, n in zip(idx, shape)):
            raise ParseError(f"index {tuple(idx)} out of range", line=lineno)
        indices.append([i - 1 for i in idx])
        values.append(val)
    idx_arr = np.array(indices, dtype=np.intp).reshape(len(indices), ndim)
    try:
        return CooTensor(shape, idx_arr, np.array(values), scarce=storage == "scarce")
    except ValueError as exc:
        raise ParseError(str(exc))


def read_csv_coo(path, shape=None, scarce: bool = False) -> CooTensor:
    """Import a CSV with columns i1,...,id,value (1-based indices).

    When ``shape`` is omitted it is inferred as the per-mode index
    maximum.  Lines that are empty or start with ``#`` are skipped.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < 2:
                raise ParseError("need at least one index and a value", line=lineno)
            try:
                idx = [int(p) for p in parts[:-1]]
                val = float(parts[-1])
            except ValueError:
                raise ParseError("bad index or value", line=lineno)
            if any(i < 1 for i in idx):
                raise ParseError("indices are 1-based", line=lineno)
            if rows and len(idx) != len(rows[0][0]):
                raise ParseError("inconsistent number of index columns", line=lineno)
            rows.append((idx, val))
    if not rows:
        raise ParseError("no data rows")
    idx_arr = np.array([r[0] for r in rows], dtype=np.intp) - 1
    values = np.array([r[1] for r in rows])
    if shape is None:
        shape = tuple(int(m) + 1 for m in idx_arr.max(axis=0))
    try:
        return CooTensor(tuple(shape), idx_arr, values, scarce=scarce)
    except ValueError as exc:
        raise ParseError(str(exc))


def export_model(m: KruskalTensor, directory) -> None:
    """Write a model as factor_k.csv per mode plus lambda.csv.

    A model without an explicit weight vector exports unit weights.
    """
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    for k, factor in enumerate(m.factors, start=1):
        rows = [",".join(_fmt(v) for v in row) for row in factor]
        atomic_write_text(
            os.path.join(directory, f"factor_{k}.csv"), "\n".join(rows) + "\n"
        )
    weights = m.weights if m.weights is not None else np.ones(m.rank)
    atomic_write_text(
        os.path.join(directory, "lambda.csv"),
        "\n".join(_fmt(v) for v in weights) + "\n",
    )


def load_model(directory) -> KruskalTensor:
    """Read a model written by :func:`export_model`."""
    directory = os.fspath(directory)
    factors = []
    k = 1
    while True:
        path = os.path.join(directory, f"factor_{k}.csv")
        if not os.path.exists(path):
            break
        with open(path) as fh:
            rows = [
                [float(tok) for tok in line.strip().split(",")]
                for line in fh
                if line.strip()
            ]
        factors.append(np.array(rows))
        k += 1
    if not factors:
        raise ParseError(f"no factor_1.csv found in {directory}")
    lam_path = os.path.join(directory, "lambda.csv")
    weights = None
    if os.path.exists(lam_path):
        with open(lam_path) as fh:
            weights = np.array([float(line) for line in fh if line.strip()])
    return KruskalTensor(factors, weights=weights)


def sample_from_model(
    m: KruskalTensor,
    name: str,
    seed: int,
    sigma: float = 1.0,
    gamma_shape=None,
    failures=None,
) -> np.ndarray:
    """Draw one data tensor whose entries have mean full(m).

    Parameters
    ----------
    m : KruskalTensor
    name : str
        Loss name selecting the distribution: gaussian (normal with
        standard deviation ``sigma``; 0 gives noiseless data),
        bernoulli_odds (success probability m/(1+m)), bernoulli_logit
        (success probability 1/(1+exp(-m))), poisson (rate m),
        poisson_log (rate exp(m)), gamma (shape ``gamma_shape``, scale
        m/shape), rayleigh (scale m * sqrt(2/pi)), negbinom (``failures``
        failures, mean m).
    seed : int
        Philox stream key; same seed, same draw.
    sigma : float, optional
        Gaussian noise level, ignored elsewhere.
    gamma_shape : float, optional
        Required for gamma; must be positive.
    failures : float, optional
        Required for negbinom; must be positive.

    Raises
    ------
    DomainError
        For losses with no sampling distribution (huber, beta_div), for
        infeasible model entries, or for missing shape parameters.
    """
    vals = m.full()
    rng = Generator(Philox(int(seed)))
    if gamma_shape is not None and name != "gamma":
        raise ValueError(f"loss {name!r} does not take gamma_shape")
    if failures is not None and name != "negbinom":
        raise ValueError(f"loss {name!r} does not take failures")

    if name == "gaussian":
        if float(sigma) < 0:
            raise DomainError("sigma must be nonnegative")
        if float(sigma) == 0.0:
            return vals
        return rng.normal(loc=vals, scale=float(sigma))
    if name == "bernoulli_odds":
        if np.any(vals < 0):
            raise DomainError("odds must be nonnegative")
        return rng.binomial(1, vals / (1.0 + vals)).astype(np.float64)
    if name == "bernoulli_logit":
        p = np.exp(vals - np.logaddexp(0.0, vals))
        return rng.binomial(1, p).astype(np.float64)
    if name == "poisson":
        if np.any(vals < 0):
            raise DomainError("poisson rate must be nonnegative")
        return rng.poisson(vals).astype(np.float64)
    if name == "poisson_log":
        return rng.poisson(np.exp(vals)).astype(np.float64)
    if name == "gamma":
        if gamma_shape is None:
            raise DomainError("gamma sampling needs gamma_shape")
        k = float(gamma_shape)
        if k <= 0:
            raise DomainError("gamma_shape must be positive")
        if np.any(vals <= 0):
            raise DomainError("gamma mean must be positive")
        return rng.gamma(shape=k, scale=vals / k)
    if name == "rayleigh":
        if np.any(vals <= 0):
            raise DomainError("rayleigh mean must be positive")
        return rng.rayleigh(scale=vals * np.sqrt(2.0 / np.pi))
    if name == "negbinom":
        if failures is None:
            raise DomainError("negbinom sampling needs failures")
        r = float(failures)
        if r <= 0:
            raise DomainError("failures must be positive")
        if np.any(vals < 0):
            raise DomainError("negbinom mean must be nonnegative")
        return rng.negative_binomial(r, r / (vals + r)).astype(np.float64)
    if name in ("huber", "beta_div"):
        raise DomainError(f"loss {name!r} has no sampling distribution")
    raise ValueError(f"unknown loss name {name!r}")


Holdout = namedtuple("Holdout", "train_mask test_indices test_values")
Holdout.__doc__ = """A train/test split over tensor positions.

Fields
------
train_mask : ndarray of bool
    True at positions kept for fitting; test positions are False, so
    the two sets are disjoint by construction.
test_indices : ndarray of shape (n_test, d)
    Held-out positions.
test_values : ndarray of shape (n_test,)
    True data values at the held-out positions.
"""


def _holdout_from_positions(x, flat_test) -> Holdout:
    train_mask = np.ones(x.size, dtype=bool)
    train_mask[flat_test] = False
    test_idx = np.column_stack(np.unravel_index(flat_test, x.shape, order="F"))
    return Holdout(
        train_mask.reshape(x.shape, order="F"),
        test_idx,
        x.reshape(-1, order="F")[flat_test].copy(),
    )


def make_holdout(x, n_ones: int, n_zeros: int, seed: int) -> Holdout:
    """Stratified split of a binary tensor: hold out ones and zeros.

    Draws ``n_ones`` positions with value 1 and ``n_zeros`` with value 0,
    uniformly without replacement; everything else is the training set.

    Raises
    ------
    ValueError
        If the tensor is not binary or lacks the requested counts.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1, order="F")
    if not np.isin(flat, (0.0, 1.0)).all():
        raise ValueError("holdout protocol needs a binary tensor")
    ones = np.flatnonzero(flat == 1.0)
    zeros = np.flatnonzero(flat == 0.0)
    if len(ones) < n_ones:
        raise ValueError(f"requested {n_ones} ones but tensor has {len(ones)}")
    if len(zeros) < n_zeros:
        raise ValueError(f"requested {n_zeros} zeros but tensor has {len(zeros)}")
    rng = Generator(Philox(int(seed)))
    picked = np.concatenate(
        [
            rng.choice(ones, size=int(n_ones), replace=False),
            rng.choice(zeros, size=int(n_zeros), replace=False),
        ]
    )
    return _holdout_from_positions(x, np.sort(picked))


def make_holdout_random(x, fraction: float, seed: int) -> Holdout:
    """Hold out a uniform fraction of all positions, unstratified."""
    x = np.asarray(x, dtype=np.float64)
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    n_test = int(fraction * x.size)
    rng = Generator(Philox(int(seed)))
    picked = rng.choice(x.size, size=n_test, replace=False)
    return _holdout_from_positions(x, np.sort(picked))


def heldout_loglik(model: KruskalTensor, holdout: Holdout, loss) -> float:
    """Bernoulli log-likelihood of held-out binary labels under a model.

    Converts model values at the held-out positions to probabilities via
    the loss's probability map (truncated away from 0 and 1), then sums
    log p over held-out ones and log(1 - p) over held-out zeros.  Only
    losses with a probability interpretation are accepted.
    """
    labels = holdout.test_values
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("held-out values must be binary")
    p = loss.probability(model.entries_at(holdout.test_indices))
    p = np.atleast_1d(np.asarray(p))
    return float(np.sum(np.where(labels == 1.0, np.log(p), np.log1p(-p))))
