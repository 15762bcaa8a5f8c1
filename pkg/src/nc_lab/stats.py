"""Ordinary least squares with exact small-sample inference.

The t-distribution tail is computed from the regularized incomplete beta
function, implemented here directly (log-gamma normalization plus a modified
Lentz continued fraction) so the package needs no statistics dependency. The
continued fraction follows the classical even/odd coefficient scheme
    d_{2m} = m (b - m) x / ((a + 2m - 1)(a + 2m))
    d_{2m+1} = -(a + m)(a + b + m) x / ((a + 2m)(a + 2m + 1))
converging fastest for x < (a + 1) / (a + b + 2); outside that range the
symmetry I_x(a, b) = 1 - I_{1-x}(b, a) is applied first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError

__all__ = [
    "regularized_incomplete_beta",
    "t_sf",
    "t_cdf",
    "t_ppf",
    "RegressionFit",
    "ols_fit",
]

_CF_MAX_ITER = 400
_CF_EPS = 3e-16
_CF_TINY = 1e-300


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        coef = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + coef * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + coef / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        coef = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + coef * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + coef / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise NumericError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the regularized incomplete beta function."""
    if a <= 0.0 or b <= 0.0:
        raise DomainError("shape parameters must be positive")
    if x < 0.0 or x > 1.0:
        raise DomainError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of the Student t distribution with df > 0."""
    if df <= 0.0:
        raise DomainError("degrees of freedom must be positive")
    if math.isnan(t):
        raise DomainError("t must be a real number")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    x = df / (df + t * t)
    half_tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return half_tail if t >= 0.0 else 1.0 - half_tail


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_sf(t, df)


def t_ppf(p: float, df: float) -> float:
    """Quantile of the Student t distribution, by bisection on the CDF."""
    if df <= 0.0:
        raise DomainError("degrees of freedom must be positive")
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_ppf(1.0 - p, df)
    hi = 1.0
    while t_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e300:
            raise NumericError("quantile bracketing failed")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class RegressionFit:
    """Simple linear regression y = intercept + slope * x with inference."""

    n: int
    slope: float
    intercept: float
    stderr: float
    t_value: float
    p_value: float
    ci95: tuple
    r_squared: float
    adj_r_squared: float
    f_statistic: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "t_value": self.t_value,
            "p_value": self.p_value,
            "ci95_low": self.ci95[0],
            "ci95_high": self.ci95[1],
            "r_squared": self.r_squared,
            "adj_r_squared": self.adj_r_squared,
            "f_statistic": self.f_statistic,
        }


def ols_fit(x, y) -> RegressionFit:
    """Fit y on x by least squares; exact t-based inference on the slope.

    Requires n >= 3 (one residual degree of freedom) and non-constant x.
    A zero residual sum of squares yields stderr 0, infinite t and F, zero
    p-value, and a degenerate confidence interval at the point estimate.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DomainError("x and y must have the same length")
    n = x.size
    if n < 3:
        raise DomainError("need at least 3 points for inference")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("inputs must be finite")
    x_mean = float(x.mean())
    y_mean = float(y.mean())
    dx = x - x_mean
    dy = y - y_mean
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DomainError("x is constant: slope is not identifiable")
    sxy = float(dx @ dy)
    syy = float(dy @ dy)
    slope = sxy / sxx
    intercept = y_mean - slope * x_mean
    resid = y - (intercept + slope * x)
    sse = float(resid @ resid)
    df = n - 2
    ssr = syy - sse
    if sse > 0.0:
        sigma2 = sse / df
        stderr = math.sqrt(sigma2 / sxx)
        t_value = slope / stderr
        p_value = 2.0 * t_sf(abs(t_value), df)
        t_crit = t_ppf(0.975, df)
        ci95 = (slope - t_crit * stderr, slope + t_crit * stderr)
        f_statistic = (ssr / 1.0) / sigma2
    else:
        stderr = 0.0
        t_value = math.inf if slope != 0.0 else 0.0
        p_value = 0.0 if slope != 0.0 else 1.0
        ci95 = (slope, slope)
        f_statistic = math.inf if ssr > 0.0 else 0.0
    if syy > 0.0:
        r_squared = 1.0 - sse / syy
    else:
        r_squared = 1.0
    adj_r_squared = 1.0 - (1.0 - r_squared) * (n - 1) / df
    return RegressionFit(
        n=n,
        slope=slope,
        intercept=intercept,
        stderr=stderr,
        t_value=t_value,
        p_value=p_value,
        ci95=ci95,
        r_squared=r_squared,
        adj_r_squared=adj_r_squared,
        f_statistic=f_statistic,
    )
