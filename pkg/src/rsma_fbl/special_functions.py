"""Scalar special functions used by the rate bounds and the FBL rate formula.

Everything here is deterministic and side-effect free. The heavy lifting is
delegated to scipy/mpmath where a mature routine exists; the capacity series
is evaluated in extended precision because its alternating terms cancel
catastrophically for large summation orders.
"""

import math
from dataclasses import dataclass

import mpmath
from scipy import special as sp

from .exceptions import DomainError, SingularParameterError

LOG2E = math.log2(math.e)
LOG2E_SQ = LOG2E * LOG2E
LN2 = math.log(2.0)


@dataclass(frozen=True)
class NumericTolerances:
    quadrature_abs_tol: float = 1e-10
    series_max_terms: int = 200
    bisection_tol: float = 1e-12

    def __post_init__(self):
        if self.quadrature_abs_tol <= 0 or self.bisection_tol <= 0:
            raise DomainError("tolerances must be strictly positive")
        if self.series_max_terms < 10:
            raise DomainError("series_max_terms must be >= 10")


DEFAULT_TOLERANCES = NumericTolerances()


def gauss_q(x):
    """Upper-tail probability of the standard normal, Q(x)."""
    return 0.5 * sp.erfc(x / math.sqrt(2.0))


def gauss_q_inv(beta):
    """Inverse Gaussian Q function: the x with Q(x) = beta."""
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must lie in (0,1), got {beta}")
    return -float(sp.ndtri(beta))


def channel_dispersion(x):
    """Dispersion V(x) = (1 - (1+x)^-2) * (log2 e)^2 for SINR x >= 0."""
    if x < 0:
        raise DomainError(f"SINR must be nonnegative, got {x}")
    return (1.0 - (1.0 + x) ** -2) * LOG2E_SQ


def exp_integral_generalized(v, x):
    """Generalized exponential integral E_v(x) = int_1^inf e^(-t x) t^(-v) dt."""
    if x <= 0:
        raise DomainError(f"E_v requires x > 0, got {x}")
    if float(v).is_integer() and v >= 0:
        return float(sp.expn(int(v), x))
    return float(mpmath.expint(v, x))


def exp_integral_scaled(n, x):
    """e^x * E_n(x) for integer n >= 0, stable for arbitrarily large x."""
    if x <= 0:
        raise DomainError(f"E_n requires x > 0, got {x}")
    n = int(n)
    if x <= 600.0:
        return math.exp(x) * float(sp.expn(n, x))
    return _expn_cf_scaled(n, x)


def _expn_cf_scaled(n, x, max_iter=500, eps=1e-15):
    # Lentz continued fraction for e^x E_n(x); accurate for x >> 1.
    b = x + n
    c = 1e308
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        a = -i * (n - 1 + i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("continued fraction for E_n did not converge")


def _series_working_dps(n, c1, c2):
    gap = abs(1.0 - c2)
    extra = 0 if gap >= 1.0 else int(math.ceil(n * -math.log10(gap)))
    # expint's internal series cancels like e^x, so reserve x/ln(10) digits
    x_digits = int(math.ceil((c1 / c2) * 0.4342944819032518)) + 10
    return min(20 + extra + x_digits, 2000)


def _check_series_args(n, c1, c2):
    if n < 1:
        raise DomainError(f"series order must be >= 1, got {n}")
    if c1 <= 0 or c2 <= 0:
        raise DomainError("c1 and c2 must be positive")
    if abs(c2 - 1.0) < 1e-6:
        raise SingularParameterError(
            f"c2 = {c2} is within 1e-6 of the series singularity at 1"
        )


def psi_capacity_series(n, c1, c2):
    """Finite alternating sum of exponential integrals behind the ergodic
    capacity of an exponential-over-shifted-power SINR distribution.

    Psi(n) = e^((c1/c2)(c2-1)) / (1-c2)^n * E_1(c1)
             - sum_{i=1..n} E_i(c1/c2) / (1-c2)^(n+1-i)
    """
    _check_series_args(n, c1, c2)
    n = int(n)
    with mpmath.workdps(_series_working_dps(n, c1, c2)):
        c1m, c2m = mpmath.mpf(c1), mpmath.mpf(c2)
        x = c1m / c2m
        one_m = 1 - c2m
        first = mpmath.exp(x * (c2m - 1)) / one_m**n * mpmath.expint(1, c1m)
        tail = mpmath.fsum(
            mpmath.expint(i, x) / one_m ** (n + 1 - i) for i in range(1, n + 1)
        )
        return float(first - tail)


def _cancellation_digits(n, c2):
    gap = abs(1.0 - c2)
    return 0 if gap >= 1.0 else int(math.ceil(n * -math.log10(gap)))


def capacity_from_series(n, c1, c2):
    """e^(c1/c2)/ln2 * Psi(n), evaluated with the exp factor folded into the
    series so that large c1/c2 cannot overflow."""
    _check_series_args(n, c1, c2)
    n = int(n)
    x = c1 / c2
    if _cancellation_digits(n, c2) <= 4 and x > 50.0:
        # far from the c2=1 singularity the alternating weights stay modest,
        # so scaled double-precision integrals are already accurate and the
        # (expensive) big-argument extended-precision route is unnecessary
        one_m = 1.0 - c2
        first = exp_integral_scaled(1, c1) / one_m**n
        tail = sum(exp_integral_scaled(i, x) / one_m ** (n + 1 - i)
                   for i in range(1, n + 1))
        return (first - tail) / LN2
    with mpmath.workdps(_series_working_dps(n, c1, c2)):
        c1m, c2m = mpmath.mpf(c1), mpmath.mpf(c2)
        x = c1m / c2m
        one_m = 1 - c2m
        first = mpmath.exp(c1m) * mpmath.expint(1, c1m) / one_m**n
        tail = mpmath.fsum(
            mpmath.exp(x) * mpmath.expint(i, x) / one_m ** (n + 1 - i)
            for i in range(1, n + 1)
        )
        return float((first - tail) / mpmath.log(2))


def digamma(x):
    """psi(x) = Gamma'(x)/Gamma(x) for x > 0."""
    if x <= 0:
        raise DomainError(f"digamma requires x > 0, got {x}")
    return float(sp.digamma(x))


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind."""
    return float(sp.j0(x))
