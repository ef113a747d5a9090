"""False-positive calibration for seed guessing.

For a fixed unit vector and a uniformly random direction in ``R^d``, the cosine
exceeds ``tau`` with probability ``0.5 * I_{1-tau^2}((d-1)/2, 1/2)``. Everything
here is carried as natural-log probabilities so that targets such as
``2**-128`` survive intermediate arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from . import kernels
from .errors import NumericalError

LN2 = math.log(2.0)
MAX_CF_ITER = 10_000


@dataclass(frozen=True)
class FalsePositiveRate:
    """``mantissa * 2**exponent``; lets ``2**-128`` be stated exactly."""

    mantissa: float = 1.0
    exponent: int = 0

    def __post_init__(self):
        if not self.mantissa > 0:
            raise ValueError("FPR mantissa must be positive")

    @classmethod
    def from_log2(cls, e):
        e = float(e)
        whole = math.floor(e)
        return cls(2.0 ** (e - whole), int(whole))

    @classmethod
    def coerce(cls, delta):
        if isinstance(delta, cls):
            return delta
        if isinstance(delta, tuple):
            return cls(*delta)
        delta = float(delta)
        if not delta > 0:
            raise ValueError("FPR must be positive")
        m, e = math.frexp(delta)
        return cls(m, e)

    def log(self):
        return math.log(self.mantissa) + self.exponent * LN2

    def log2(self):
        return self.log() / LN2

    def value(self):
        return math.ldexp(self.mantissa, self.exponent)


@dataclass(frozen=True)
class CalibrationParams:
    dimension_d: int
    delta: FalsePositiveRate
    tau: float

    @property
    def achieved_log2(self):
        return exact_cap_probability(self.dimension_d, self.tau) / LN2


def _log_beta(p, q):
    return math.lgamma(p) + math.lgamma(q) - math.lgamma(p + q)


def _log_front(p, q, x, y):
    # log of x^p y^q / (p B(p, q)), with y = 1 - x supplied exactly
    return p * math.log(x) + q * math.log(y) - math.log(p) - _log_beta(p, q)


def _cf(p, q, x):
    h, it = kernels.betacf(p, q, x, MAX_CF_ITER)
    if it < 0:
        raise NumericalError(
            f"incomplete beta continued fraction did not converge (p={p}, q={q}, x={x})")
    if not h > 0:
        raise NumericalError("non-positive continued fraction value")
    return h


def log_reg_inc_beta(p, q, x, y=None):
    """Natural log of the regularized incomplete beta ``I_x(p, q)``.

    ``y`` may carry ``1 - x`` computed without cancellation by the caller.
    """
    if not (p > 0 and q > 0):
        raise ValueError("p and q must be positive")
    x = float(x)
    if y is None:
        y = 1.0 - x
    if not (0.0 <= x <= 1.0):
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return -math.inf
    if y == 0.0:
        return 0.0
    if x < (p + 1.0) / (p + q + 2.0):
        return _log_front(p, q, x, y) + math.log(_cf(p, q, x))
    # complement keeps the continued fraction in its convergent regime
    log_other = _log_front(q, p, y, x) + math.log(_cf(q, p, y))
    return math.log1p(-math.exp(log_other))


def exact_cap_probability(d, tau):
    """log Pr[cos(X, v) >= tau] for a standard Gaussian ``X`` in ``R^d``."""
    d = int(d)
    if d < 2:
        raise ValueError("dimension must be at least 2")
    tau = float(tau)
    if not -1.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [-1, 1]")
    if tau == 1.0:
        return -math.inf
    t2 = tau * tau
    half = -LN2 + log_reg_inc_beta((d - 1) / 2.0, 0.5, 1.0 - t2, t2)
    if tau >= 0.0:
        return half
    return math.log1p(-math.exp(half))


def cap_bound(d, tau):
    """log of the exponential bound ``exp(-(d-1)/2 * tau^2)``."""
    if int(d) < 2:
        raise ValueError("dimension must be at least 2")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return -((int(d) - 1) / 2.0) * tau * tau


def calibrate_threshold(d, delta, tau_tol=1e-9, log_tol=1e-7):
    """Smallest ``tau`` (to ``tau_tol``) whose cap probability is at most ``delta``.

    Bisection keeps going past ``tau_tol`` until the achieved log-probability is
    within ``log_tol`` of ``log(delta)`` or the bracket reaches float resolution.
    """
    d = int(d)
    if d < 2:
        raise ValueError("dimension must be at least 2")
    fpr = FalsePositiveRate.coerce(delta)
    target = fpr.log()
    if target >= -LN2:
        raise ValueError("target false positive rate must be below 0.5")

    lo, hi = 0.0, min(1.0, math.sqrt(2.0 * -target / (d - 1)))
    p_hi = exact_cap_probability(d, hi)
    if p_hi > target:  # the bound guarantees this never happens
        raise NumericalError("exponential bound failed to bracket the threshold")
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        p_mid = exact_cap_probability(d, mid)
        if p_mid <= target:
            hi, p_hi = mid, p_mid
        else:
            lo = mid
        if hi - lo < tau_tol and target - p_hi <= log_tol:
            break
    return hi


def calibrate(d, delta) -> CalibrationParams:
    fpr = FalsePositiveRate.coerce(delta)
    return CalibrationParams(int(d), fpr, calibrate_threshold(d, fpr))
