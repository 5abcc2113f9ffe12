"""Closed-form ergodic-rate lower bounds.

The chain of approximations: sums of Gamma-distributed precoder gains are
moment-matched to single Gamma variables; the common-stream SINR then has an
exponential-over-shifted-power CDF whose capacity and mean reduce to
generalized exponential integrals; the private-stream rate splits into two
log terms (Jensen on ln and on the interference mean) minus a dispersion
penalty evaluated at the mean SINR.

All bounds are clamped at zero and are derived for the isotropic random
common precoder; with the dominant-singular-vector precoder they remain
useful predictors but the lower-bound guarantee is only empirical.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import special_functions as sf
from .exceptions import DomainError

T_CLIP = 1e-4
C2_GUARD = 1e-6


@dataclass(frozen=True)
class GammaParams:
    shape: float
    scale: float

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise DomainError(f"Gamma params must be positive, got {self}")

    @property
    def mean(self):
        return self.shape * self.scale


@dataclass(frozen=True)
class CommonBoundParams:
    c1: float
    c2: float
    d_int: int

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0 or self.d_int < 1:
            raise DomainError(f"invalid common-bound params {self}")


@dataclass(frozen=True)
class PrivateBoundParams:
    ck1: float
    ck2: float
    alpha_k: float
    eta_k: float


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def gamma_moment_match(components):
    """Single Gamma with the first two moments of a sum of Gammas."""
    if not components:
        raise DomainError("need at least one component")
    s1 = sum(g.shape * g.scale for g in components)
    s2 = sum(g.shape * g.scale**2 for g in components)
    return GammaParams(shape=s1 * s1 / s2, scale=s2 / s1)


def aggregate_interference_params(nt, k, eps):
    """Moment-matched Gamma for the total precoder gain seen by one user
    under delayed CSI with correlation eps."""
    if not nt >= k >= 1:
        raise DomainError("need nt >= k >= 1")
    if not 0.0 <= eps <= 1.0:
        raise DomainError("eps must lie in [0, 1]")
    e2, e4 = eps**2, eps**4
    num = e2 * (nt + 1) + (1.0 - 2.0 * e2) * k
    den = e4 * (nt + 1) + (1.0 - 2.0 * e2) * k
    if den <= 0 or num <= 0:
        raise DomainError(f"degenerate aggregate parameters at eps={eps}")
    return GammaParams(shape=num * num / den, scale=den / num)


def common_cdf_params(t, p_mw, zeta, nt, k, eps):
    """(c1, c2, d) parameters of the worst-user common SINR CDF."""
    if not 0.0 < t < 1.0:
        raise sf.SingularParameterError(f"t={t} must lie strictly in (0, 1)")
    zeta = np.asarray(zeta, dtype=float)
    agg = aggregate_interference_params(nt, k, eps)
    c1 = float(np.sum(1.0 / (zeta * p_mw * (1.0 - t))))
    c2 = agg.scale * t / (k * (1.0 - t))
    d_int = max(1, round_half_away(agg.shape * k))
    return CommonBoundParams(c1=c1, c2=c2, d_int=d_int)


def common_cdf(y, params):
    """CDF F(y) = 1 - e^(-c1 y) / (c2 y + 1)^d of the worst-user SINR."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise DomainError("CDF argument must be nonnegative")
    out = 1.0 - np.exp(-params.c1 * y) / (params.c2 * y + 1.0) ** params.d_int
    return float(out) if out.ndim == 0 else out


def expected_common_capacity(params):
    """Closed-form E[log2(1 + SINR)] for the common-stream CDF."""
    return sf.capacity_from_series(params.d_int, params.c1, params.c2)


def expected_common_sinr(params):
    """Closed-form mean of the common-stream SINR (tail integral)."""
    x = params.c1 / params.c2
    return sf.exp_integral_scaled(params.d_int, x) / params.c2


def _common_eps(derived):
    # heterogeneous mobility: use the most decorrelated user, which drives
    # the worst-user SINR that the common stream must survive
    return float(np.min(derived.epsilon))


def common_rate_lower_bound(t, config, derived):
    """Ergodic common-stream rate lower bound at global power split t."""
    if t >= 1.0 - T_CLIP:
        return 0.0
    t = max(t, T_CLIP)
    params = common_cdf_params(
        t,
        derived.tx_power_mW,
        derived.zeta,
        config.num_tx_antennas,
        config.num_users,
        _common_eps(derived),
    )
    if abs(params.c2 - 1.0) < C2_GUARD:
        shift = 1e-5 if params.c2 >= 1.0 else -1e-5
        params = CommonBoundParams(params.c1, 1.0 + shift, params.d_int)
    capacity = expected_common_capacity(params)
    qinv = max(sf.gauss_q_inv(b) for b in config.bler_common)
    penalty = math.sqrt(
        sf.channel_dispersion(expected_common_sinr(params)) / config.blocklength_common
    ) * qinv
    return max(0.0, capacity - penalty)


def private_xk_params(mu, eps, nt, k_users, k):
    """Moment-matched Gamma of the total gain in user k's private SINR
    numerator expansion, plus its mean log."""
    mu = np.asarray(mu, dtype=float)
    e2, e4 = eps**2, eps**4
    m = nt - k_users + 1
    base = m * e2 * mu[k] + (1.0 - e2)
    den = m * e4 * mu[k] ** 2 + (1.0 - e2) ** 2 * float(np.sum(mu**2))
    if base <= 0 or den <= 0:
        raise DomainError("degenerate private-gain parameters")
    params = GammaParams(shape=base * base / den, scale=den / base)
    alpha_k = math.log(params.scale) + sf.digamma(params.shape)
    return params, alpha_k


def private_yk_params(mu, eps, k_users, k):
    """Moment-matched Gamma of user k's residual interference, plus its
    exact mean eta_k = (1 - eps^2)(1 - mu_k)."""
    mu = np.asarray(mu, dtype=float)
    eta_k = (1.0 - eps**2) * (1.0 - mu[k])
    rest = float(np.sum(np.delete(mu, k) ** 2))
    if mu[k] >= 1.0 - 1e-15 or rest == 0.0 or eps >= 1.0:
        return None, eta_k  # interference-free / perfect nulling
    shape = (1.0 - mu[k]) ** 2 / rest
    scale = (1.0 - eps**2) * rest / (1.0 - mu[k])
    return GammaParams(shape=shape, scale=scale), eta_k


def matched_filter_gain_params(nt, k_users, eps):
    """Moment-matched Gamma of the own-precoder gain |h_k^H p_k|^2."""
    m = nt - k_users + 1
    e2, e4 = eps**2, eps**4
    num = m * e2 + (1.0 - e2)
    den = m * e4 + (1.0 - e2) ** 2
    return GammaParams(shape=num * num / den, scale=den / num)


def private_sinr_mean(t, mu, config, derived, k):
    """Closed-form mean of the symmetrized private SINR of user k."""
    mu = np.asarray(mu, dtype=float)
    if t <= 0.0 or mu[k] <= 0.0:
        return 0.0
    nt, k_users = config.num_tx_antennas, config.num_users
    eps = float(derived.epsilon[k])
    p_mw, zeta = derived.tx_power_mW, float(derived.zeta[k])
    mk = matched_filter_gain_params(nt, k_users, eps)
    mean_gain = mk.mean
    if k_users == 1:
        return p_mw * t * zeta * mu[k] * mean_gain
    ck2 = (1.0 - mu[k]) * (1.0 - eps**2) / ((k_users - 1) * mu[k] * mean_gain)
    if ck2 < 1e-12:
        # interference vanishes (eps -> 1 or mu_k -> 1): noise-limited mean
        return p_mw * t * zeta * mu[k] * mean_gain
    ck1 = 1.0 / (p_mw * t * zeta * mu[k] * mean_gain)
    return sf.exp_integral_scaled(k_users - 1, ck1 / ck2) / ck2


def private_rate_lower_bound(t, mu, config, derived, k):
    """Ergodic private-stream rate lower bound for user k."""
    mu = np.asarray(mu, dtype=float)
    if t <= 0.0 or mu[k] <= 0.0:
        return 0.0
    eps = float(derived.epsilon[k])
    p_mw, zeta = derived.tx_power_mW, float(derived.zeta[k])
    _, alpha_k = private_xk_params(mu, eps, config.num_tx_antennas, config.num_users, k)
    _, eta_k = private_yk_params(mu, eps, config.num_users, k)
    gain = math.log2(1.0 + p_mw * t * zeta * math.exp(alpha_k))
    # eta may dip below zero on exploratory off-simplex iterates
    loss = math.log2(1.0 + p_mw * t * zeta * max(eta_k, 0.0))
    mean_sinr = private_sinr_mean(t, mu, config, derived, k)
    penalty = math.sqrt(
        sf.channel_dispersion(mean_sinr) / config.blocklength_private[k]
    ) * sf.gauss_q_inv(config.bler_private[k])
    return max(0.0, gain - loss - penalty)


def bound_sum_rate(t, mu, config, derived):
    """Common-plus-private closed-form sum-rate bound at allocation (t, mu)."""
    t = min(max(t, 0.0), 1.0)
    common = common_rate_lower_bound(t, config, derived)
    t_priv = max(t, T_CLIP) if t > 0.0 else 0.0
    private = sum(
        private_rate_lower_bound(t_priv, mu, config, derived, k)
        for k in range(config.num_users)
    )
    return common + private
