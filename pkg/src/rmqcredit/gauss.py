"""Standard normal primitives used by every numerical module.

``norm_cdf`` is scipy's ``ndtr`` (Cephes, erf/erfc based), accurate to a few
ulps over the whole real line, which keeps the absolute error below 1e-15.
"""

import numpy as np
from scipy.special import ndtr, ndtri

SQRT_2PI = np.sqrt(2.0 * np.pi)


def norm_cdf(x):
    return ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


def norm_ppf(u):
    return ndtri(u)


def cdf_diff(lo, hi):
    """``Phi(hi) - Phi(lo)`` without cancellation in the upper tail."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    upper = lo > 0.0
    return np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
