"""Elementwise loss catalog for generalized low-rank fitting.

Each loss couples one data value x to one model value m through f(x, m);
the fitting objective averages f over the observed entries.  The catalog
covers continuous data (gaussian, huber), binary data (bernoulli_odds,
bernoulli_logit), counts (poisson, poisson_log, negbinom), positive
continuous data (gamma, rayleigh), and the beta divergence family.

A small shift ``epsilon`` (default 1e-10) is added to m inside every
logarithm and denominator so that boundary values such as m = 0 stay
finite.  Losses whose formulas need m >= 0 carry ``lower_bound`` 0, and
fitting enforces the bound by keeping factor matrices nonnegative.

Value and derivative routines are vectorized, pure, and safe to call
concurrently.  Data-domain checks (x binary, x a count, ...) are meant to
run once at data load; pass ``debug=True`` to re-check per evaluation.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

from .exceptions import DomainError, FeasibilityError

__all__ = ["LossSpec", "LOSS_NAMES"]

NEG_INF = float("-inf")

# Probabilities reported for binary prediction are kept inside this range.
PROB_FLOOR = 1e-16


def _sigmoid(m):
    # exp(m - log(1 + e^m)) is stable for large |m| in both directions
    return np.exp(m - np.logaddexp(0.0, m))


# ---------------------------------------------------------------------------
# value / derivative formulas; u = m + eps denotes the shifted model value


def _gaussian_value(x, m, s):
    return (x - m) ** 2


def _gaussian_deriv(x, m, s):
    return -2.0 * (x - m)


def _bern_odds_value(x, m, s):
    return np.log1p(m) - x * np.log(m + s.epsilon)


def _bern_odds_deriv(x, m, s):
    return 1.0 / (1.0 + m) - x / (m + s.epsilon)


def _bern_logit_value(x, m, s):
    return np.logaddexp(0.0, m) - x * m


def _bern_logit_deriv(x, m, s):
    return _sigmoid(m) - x


def _poisson_value(x, m, s):
    return m - x * np.log(m + s.epsilon)


def _poisson_deriv(x, m, s):
    return 1.0 - x / (m + s.epsilon)


def _poisson_log_value(x, m, s):
    return np.exp(m) - x * m


def _poisson_log_deriv(x, m, s):
    return np.exp(m) - x


def _gamma_value(x, m, s):
    u = m + s.epsilon
    return x / u + np.log(u)


def _gamma_deriv(x, m, s):
    u = m + s.epsilon
    return 1.0 / u - x / u**2


def _rayleigh_value(x, m, s):
    u = m + s.epsilon
    return 2.0 * np.log(u) + (np.pi / 4.0) * (x / u) ** 2


def _rayleigh_deriv(x, m, s):
    u = m + s.epsilon
    return 2.0 / u - (np.pi / 2.0) * x**2 / u**3


def _negbinom_value(x, m, s):
    return (s.failures + x) * np.log1p(m) - x * np.log(m + s.epsilon)


def _negbinom_deriv(x, m, s):
    return (s.failures + x) / (1.0 + m) - x / (m + s.epsilon)


def _huber_value(x, m, s):
    d = x - m
    quad = np.abs(d) <= s.delta
    return np.where(quad, d**2, 2.0 * s.delta * np.abs(d) - s.delta**2)


def _huber_deriv(x, m, s):
    d = x - m
    quad = np.abs(d) <= s.delta
    return np.where(quad, -2.0 * d, -2.0 * s.delta * np.sign(d))


def _beta_div_value(x, m, s):
    b = s.beta
    if b == 1.0:
        return _poisson_value(x, m, s)
    if b == 0.0:
        return _gamma_value(x, m, s)
    u = m + s.epsilon
    return u**b / b - x * u ** (b - 1.0) / (b - 1.0)


def _beta_div_deriv(x, m, s):
    b = s.beta
    if b == 1.0:
        return _poisson_deriv(x, m, s)
    if b == 0.0:
        return _gamma_deriv(x, m, s)
    u = m + s.epsilon
    return u ** (b - 1.0) - x * u ** (b - 2.0)


# ---------------------------------------------------------------------------
# data-domain checks, run at load time


def _check_real(x, name):
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} data must be finite")


def _check_binary(x, name):
    _check_real(x, name)
    if not np.all((x == 0.0) | (x == 1.0)):
        raise DomainError(f"{name} data must be 0 or 1")


def _check_count(x, name):
    _check_real(x, name)
    if np.any(x < 0) or not np.all(x == np.floor(x)):
        raise DomainError(f"{name} data must be nonnegative integers")


def _check_positive(x, name):
    _check_real(x, name)
    if np.any(x <= 0):
        raise DomainError(f"{name} data must be strictly positive")


def _check_nonneg(x, name):
    _check_real(x, name)
    if np.any(x < 0):
        raise DomainError(f"{name} data must be nonnegative")


_Loss = namedtuple("_Loss", "value deriv lower_bound domain requires")

_CATALOG = {
    "gaussian": _Loss(_gaussian_value, _gaussian_deriv, NEG_INF, _check_real, ()),
    "bernoulli_odds": _Loss(_bern_odds_value, _bern_odds_deriv, 0.0, _check_binary, ()),
    "bernoulli_logit": _Loss(
        _bern_logit_value, _bern_logit_deriv, NEG_INF, _check_binary, ()
    ),
    "poisson": _Loss(_poisson_value, _poisson_deriv, 0.0, _check_count, ()),
    "poisson_log": _Loss(_poisson_log_value, _poisson_log_deriv, NEG_INF, _check_count, ()),
    "gamma": _Loss(_gamma_value, _gamma_deriv, 0.0, _check_positive, ()),
    "rayleigh": _Loss(_rayleigh_value, _rayleigh_deriv, 0.0, _check_nonneg, ()),
    "negbinom": _Loss(_negbinom_value, _negbinom_deriv, 0.0, _check_count, ("failures",)),
    "huber": _Loss(_huber_value, _huber_deriv, NEG_INF, _check_real, ("delta",)),
    "beta_div": _Loss(_beta_div_value, _beta_div_deriv, 0.0, _check_nonneg, ("beta",)),
}

LOSS_NAMES = tuple(_CATALOG)


class LossSpec:
    """One entry of the loss catalog, with its parameters fixed.

    Parameters
    ----------
    name : str
        One of ``LOSS_NAMES``.
    epsilon : float, optional
        Shift added to m inside logs and denominators.  Default 1e-10.
    delta : float, optional
        Huber transition width; required (and only allowed) for huber.
    beta : float, optional
        Divergence exponent; required for beta_div.  beta=1 reproduces
        the poisson formulas and beta=0 the gamma formulas exactly.
    failures : float, optional
        Number-of-failures parameter r > 0; required for negbinom.  Any
        positive real is accepted.

    Attributes
    ----------
    lower_bound : float
        0.0 when the loss needs m >= 0 (this includes beta_div for every
        beta, since the shifted powers assume a nonnegative model),
        ``-inf`` otherwise.

    Notes
    -----
    Instances are immutable; treat them as values.
    """

    def __init__(self, name, epsilon=1e-10, delta=None, beta=None, failures=None):
        if name not in _CATALOG:
            raise ValueError(
                f"unknown loss {name!r}; choose from {', '.join(LOSS_NAMES)}"
            )
        epsilon = float(epsilon)
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        given = {"delta": delta, "beta": beta, "failures": failures}
        entry = _CATALOG[name]
        for p in entry.requires:
            if given[p] is None:
                raise ValueError(f"loss {name!r} requires parameter {p!r}")
        for p, v in given.items():
            if v is not None and p not in entry.requires:
                raise ValueError(f"loss {name!r} does not take parameter {p!r}")
        if delta is not None and not float(delta) > 0:
            raise ValueError("delta must be positive")
        if failures is not None and not float(failures) > 0:
            raise ValueError("failures must be positive")
        self.name = name
        self.epsilon = epsilon
        self.delta = None if delta is None else float(delta)
        self.beta = None if beta is None else float(beta)
        self.failures = None if failures is None else float(failures)
        self._entry = entry

    @property
    def lower_bound(self) -> float:
        return self._entry.lower_bound

    @property
    def bounded(self) -> bool:
        """Whether model values are constrained to m >= 0."""
        return self._entry.lower_bound == 0.0

    def value(self, x, m, debug: bool = False):
        """Loss f(x, m), elementwise over broadcast arguments.

        Raises
        ------
        FeasibilityError
            If any m violates the loss's lower bound.
        DomainError
            With ``debug=True``, if any x is outside the data domain.
        """
        x, m = self._prepare(x, m, debug)
        out = np.asarray(self._entry.value(x, m, self))
        return out if out.ndim else float(out)

    def deriv(self, x, m, debug: bool = False):
        """Partial derivative of the loss in its model argument."""
        x, m = self._prepare(x, m, debug)
        out = np.asarray(self._entry.deriv(x, m, self))
        return out if out.ndim else float(out)

    def _prepare(self, x, m, debug):
        x = np.asarray(x, dtype=np.float64)
        m = np.asarray(m, dtype=np.float64)
        if debug:
            self.check_data(x)
        if self.bounded and np.any(m < 0):
            raise FeasibilityError(
                f"model values must be >= 0 for the {self.name} loss"
            )
        return x, m

    def check_data(self, x) -> None:
        """Validate that data values lie in this loss's domain."""
        self._entry.domain(np.asarray(x, dtype=np.float64), self.name)

    def project_feasible(self, m):
        """Clamp model values to the feasible set (identity if unbounded)."""
        m = np.asarray(m, dtype=np.float64)
        out = np.maximum(m, 0.0) if self.bounded else m
        return out if out.ndim else float(out)

    def probability(self, m):
        """Convert model values to success probabilities for binary data.

        Supported for gaussian (the model value is the probability,
        truncated into (0, 1)), bernoulli_odds (p = m / (1 + m)), and
        bernoulli_logit (p = sigmoid(m)).  Results are truncated to
        [1e-16, 1 - 1e-16] so log-likelihoods stay finite.
        """
        m = np.asarray(m, dtype=np.float64)
        if self.name == "gaussian":
            p = m
        elif self.name == "bernoulli_odds":
            p = m / (1.0 + m)
        elif self.name == "bernoulli_logit":
            p = _sigmoid(m)
        else:
            raise DomainError(
                f"no probability conversion for the {self.name} loss"
            )
        out = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
        return out if out.ndim else float(out)

    def __eq__(self, other):
        if not isinstance(other, LossSpec):
            return NotImplemented
        return (self.name, self.epsilon, self.delta, self.beta, self.failures) == (
            other.name,
            other.epsilon,
            other.delta,
            other.beta,
            other.failures,
        )

    def __hash__(self):
        return hash((self.name, self.epsilon, self.delta, self.beta, self.failures))

    def __repr__(self) -> str:
        parts = [repr(self.name)]
        if self.epsilon != 1e-10:
            parts.append(f"epsilon={self.epsilon!r}")
        for p in ("delta", "beta", "failures"):
            v = getattr(self, p)
            if v is not None:
                parts.append(f"{p}={v!r}")
        return f"LossSpec({', '.join(parts)})"
