"""Regularized lower incomplete gamma function, compiled with numba.

Used for gamma-distributed event and censoring times in the simulator and
in the oracle nuisance models.  Series expansion below ``a + 1``, modified
Lentz continued fraction above it.
"""

import math

import numba
import numpy as np

_EPS = 1e-16
_TINY = 1e-300
_MAXIT = 2000


@numba.njit(cache=True)
def _gammainc_scalar(a, x):
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    lg = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(_MAXIT):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        return min(1.0, total * math.exp(lg))
    # continued fraction for the upper tail
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAXIT):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return max(0.0, 1.0 - math.exp(lg) * h)


@numba.vectorize(["float64(float64, float64)"], cache=True)
def gammainc(a, x):
    """P(a, x) = gamma(a, x) / Gamma(a) for a > 0, x >= 0 (elementwise)."""
    return _gammainc_scalar(a, x)


def gamma_cdf(t, shape, scale):
    """CDF of Gamma(shape, scale) at ``t``; broadcasts over all arguments."""
    t = np.asarray(t, dtype=float)
    return gammainc(np.asarray(shape, dtype=float), np.maximum(t, 0.0) / scale)
