"""Digamma/trigamma and log-factorial evaluations for count models.

At positive integer arguments the recurrence below reduces to the exact
harmonic-series identities

    psi0(n) = -euler_gamma + sum_{k=1}^{n-1} 1/k
    psi1(n) = pi^2/6      - sum_{k=1}^{n-1} 1/k^2

which is all the count-data control variates need.  Non-integer arguments
(cluster centroids average counts, so they are the common case) go through
the same recurrence followed by the asymptotic series.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

EULER_GAMMA = 0.57721566490153286060651209008240243

# Bernoulli-number coefficients B_2k/(2k) for the digamma asymptotic series.
_DIGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_2k for the trigamma series.
_TRIGAMMA_COEF = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)
_RECURRENCE_CUTOFF = 10.0


def _shift_up(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply psi recurrences until every argument is >= cutoff.

    Returns the shifted arguments together with the accumulated
    sum(1/x) and sum(1/x^2) correction terms.
    """
    x = x.astype(float).copy()
    acc1 = np.zeros_like(x)
    acc2 = np.zeros_like(x)
    # cutoff - min(x) bounded steps; x > 0 so at most ceil(cutoff) passes
    for _ in range(int(_RECURRENCE_CUTOFF) + 1):
        mask = x < _RECURRENCE_CUTOFF
        if not mask.any():
            break
        acc1[mask] += 1.0 / x[mask]
        acc2[mask] += 1.0 / x[mask] ** 2
        x[mask] += 1.0
    return x, acc1, acc2


def digamma(x):
    """First log-gamma derivative, elementwise, for x > 0."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(~np.isfinite(x)) or np.any(x <= 0.0):
        raise DomainError("digamma requires finite arguments > 0")
    z, acc1, _ = _shift_up(x)
    inv = 1.0 / z
    inv2 = inv * inv
    out = np.log(z) - 0.5 * inv
    term = inv2.copy()
    for c in _DIGAMMA_COEF:
        out -= c * term
        term *= inv2
    out -= acc1
    return float(out[0]) if scalar else out


def trigamma(x):
    """Second log-gamma derivative, elementwise, for x > 0."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(~np.isfinite(x)) or np.any(x <= 0.0):
        raise DomainError("trigamma requires finite arguments > 0")
    z, _, acc2 = _shift_up(x)
    inv = 1.0 / z
    inv2 = inv * inv
    out = inv + 0.5 * inv2
    term = inv * inv2
    for c in _TRIGAMMA_COEF:
        out += c * term
        term *= inv2
    out += acc2
    return float(out[0]) if scalar else out


def log_factorial(y):
    """log(y!) = log Gamma(y+1); overflow-free for large counts, valid for real y > -1."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= -1.0):
        raise DomainError("log_factorial requires y > -1")
    return gammaln(y + 1.0)
