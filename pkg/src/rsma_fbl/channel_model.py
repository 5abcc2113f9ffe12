"""Scenario configuration, time-correlated Rayleigh channels, precoding,
SINR evaluation and the finite-blocklength instantaneous rate.

Channels follow a first-order Gauss-Markov (Jakes-correlated) model: the
transmitter only knows the channel one reporting interval in the past, and
the current channel is a correlation-weighted mix of the delayed channel and
an independent error term. Zero-forcing precoders are built from the delayed
channel, so residual interference at the current instant scales with the
channel decorrelation.

Powers are carried in milliwatts throughout so dBm configuration values
convert directly; large-scale gains are normalized by the noise power
(per-milliwatt gains).
"""

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from . import special_functions as sf
from .exceptions import ConditioningError, ConfigError, ConvergenceError, DomainError

SPEED_OF_LIGHT = 3.0e8
COMMON_PRECODER_MODES = ("isotropic_random", "dominant_left_singular")

ZF_NULL_TOL = 1e-8
UNIT_NORM_TOL = 1e-9
GRAM_RCOND_MIN = 1e-10
POWER_ITER_TOL = 1e-10
POWER_ITER_MAX = 10_000


@dataclass
class SystemConfig:
    """Full scenario description. Field names double as the JSON schema."""

    num_tx_antennas: int
    num_users: int
    tx_power_dBm: float
    carrier_freq_Hz: float
    bandwidth_Hz: float
    noise_density_dBm_per_Hz: float
    csi_delay_s: float
    blocklength_common: int
    blocklength_private: list
    bler_common: list
    bler_private: list
    velocities_kmh: list
    distances_m: list
    pathloss_ref_dB: float
    pathloss_exponent: float
    ref_distance_m: float
    qos_min_rate: float
    common_precoder_mode: str
    rng_seed: int

    def __post_init__(self):
        k = self.num_users
        if not (self.num_tx_antennas >= k >= 1):
            raise ConfigError("need num_tx_antennas >= num_users >= 1")
        if not math.isfinite(self.tx_power_dBm):
            raise ConfigError("tx_power_dBm must be finite")
        for name in ("blocklength_private", "bler_common", "bler_private",
                     "velocities_kmh", "distances_m"):
            seq = getattr(self, name)
            if len(seq) != k:
                # an empty distance list means "draw placements from the seed"
                if name == "distances_m" and len(seq) == 0:
                    continue
                raise ConfigError(f"{name} must have length num_users={k}")
        if self.blocklength_common < 1 or any(l < 1 for l in self.blocklength_private):
            raise ConfigError("all blocklengths must be >= 1")
        for b in list(self.bler_common) + list(self.bler_private):
            if not 0.0 < b < 0.5:
                raise ConfigError(f"BLER {b} outside (0, 0.5)")
        if any(d <= 0 for d in self.distances_m):
            raise ConfigError("distances must be positive")
        if any(v < 0 for v in self.velocities_kmh):
            raise ConfigError("velocities must be nonnegative")
        if self.qos_min_rate < 0:
            raise ConfigError("qos_min_rate must be nonnegative")
        if self.common_precoder_mode not in COMMON_PRECODER_MODES:
            raise ConfigError(
                f"common_precoder_mode must be one of {COMMON_PRECODER_MODES}"
            )

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = known - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def replace(self, **overrides):
        data = self.to_dict()
        data.update(overrides)
        return SystemConfig.from_dict(data)


def default_config(**overrides):
    """Desk-scale defaults: 8x4 downlink at 35 dBm, 5.9 GHz, 300-symbol
    blocks at BLER 1e-6, 110 km/h vehicles."""
    base = dict(
        num_tx_antennas=8,
        num_users=4,
        tx_power_dBm=35.0,
        carrier_freq_Hz=5.9e9,
        bandwidth_Hz=10e6,
        noise_density_dBm_per_Hz=-174.0,
        csi_delay_s=0.4e-3,
        blocklength_common=300,
        blocklength_private=[300] * 4,
        bler_common=[1e-6] * 4,
        bler_private=[1e-6] * 4,
        velocities_kmh=[110.0] * 4,
        distances_m=[100.0, 150.0, 200.0, 300.0],
        pathloss_ref_dB=-30.0,
        pathloss_exponent=3.7,
        ref_distance_m=1.0,
        qos_min_rate=0.1,
        common_precoder_mode="isotropic_random",
        rng_seed=12345,
    )
    base.update(overrides)
    k = base["num_users"]
    for name in ("blocklength_private", "bler_common", "bler_private",
                 "velocities_kmh", "distances_m"):
        if len(base[name]) != k and len(set(base[name])) == 1:
            base[name] = [base[name][0]] * k
    return SystemConfig.from_dict(base)


def distance_for_gain(zeta, config):
    """Distance whose normalized large-scale gain equals `zeta`."""
    noise_dbm = config.noise_density_dBm_per_Hz + 10.0 * math.log10(config.bandwidth_Hz)
    target_db = 10.0 * math.log10(zeta) + noise_dbm
    return config.ref_distance_m * 10.0 ** (
        (config.pathloss_ref_dB - target_db) / (10.0 * config.pathloss_exponent)
    )


@dataclass
class DerivedLink:
    """Per-user quantities derived from the scenario geometry and mobility."""

    epsilon: np.ndarray
    zeta: np.ndarray
    tx_power_mW: float

    def __post_init__(self):
        self.epsilon = np.asarray(self.epsilon, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)
        if np.any(self.epsilon < 0) or np.any(self.epsilon > 1):
            raise DomainError("epsilon must lie in [0, 1]")
        if np.any(self.zeta <= 0):
            raise DomainError("zeta must be positive")


def time_correlation(v_kmh, f_c, T):
    """Jakes correlation J0(2 pi f_D T), clamped to [0, 1]."""
    if f_c <= 0 or T <= 0:
        raise DomainError("carrier frequency and delay must be positive")
    f_doppler = (v_kmh / 3.6) * f_c / SPEED_OF_LIGHT
    eps = sf.bessel_j0(2.0 * math.pi * f_doppler * T)
    return min(max(eps, 0.0), 1.0)


def large_scale_gain(d_m, config):
    """Normalized large-scale gain zeta = xi / sigma^2 (per milliwatt)."""
    if d_m <= 0:
        raise DomainError("distance must be positive")
    loss_db = config.pathloss_ref_dB - 10.0 * config.pathloss_exponent * math.log10(
        d_m / config.ref_distance_m
    )
    xi = 10.0 ** (loss_db / 10.0)
    noise_mw = 10.0 ** (
        (config.noise_density_dBm_per_Hz + 10.0 * math.log10(config.bandwidth_Hz)) / 10.0
    )
    return xi / noise_mw


def place_users(config, lo_m=100.0, hi_m=300.0):
    """Resolve an empty distance list into a seeded uniform placement."""
    if config.distances_m:
        return config
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.rng_seed, spawn_key=(0x9E0,))
    )
    distances = sorted(rng.uniform(lo_m, hi_m, size=config.num_users).tolist())
    return config.replace(distances_m=distances)


def derive_link(config):
    if not config.distances_m:
        raise ConfigError("distances_m is unresolved; call place_users first")
    eps = np.array(
        [
            time_correlation(v, config.carrier_freq_Hz, config.csi_delay_s)
            for v in config.velocities_kmh
        ]
    )
    zeta = np.array([large_scale_gain(d, config) for d in config.distances_m])
    return DerivedLink(eps, zeta, dbm_to_mw(config.tx_power_dBm))


def dbm_to_mw(p_dbm):
    return 10.0 ** (p_dbm / 10.0)


@dataclass
class ChannelRealization:
    """Delayed/current channel pair plus the precoders for one trial."""

    h_prev: np.ndarray  # (Nt, K), channel at the reporting instant
    h_curr: np.ndarray  # (Nt, K), channel when transmission happens
    precoder_common: np.ndarray  # (Nt,)
    precoders_private: np.ndarray  # (Nt, K), unit-norm columns
    resamples: int = 0


def trial_rng(seed, trial):
    """Counter-based substream: independent, reproducible per (seed, trial)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))


def _complex_gaussian(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def draw_trial_variates(rng, nt, k, isotropic):
    """Raw per-trial randomness: delayed channel, error matrix, optional
    isotropic direction. Resamples on an ill-conditioned Gram matrix."""
    for attempt in range(100):
        h_prev = _complex_gaussian(rng, (nt, k))
        err = _complex_gaussian(rng, (nt, k))
        g = _complex_gaussian(rng, (nt,)) if isotropic else None
        gram = h_prev.conj().T @ h_prev
        if 1.0 / np.linalg.cond(gram) > GRAM_RCOND_MIN:
            return h_prev, err, g, attempt
    raise ConditioningError("could not draw a well-conditioned channel in 100 tries")


def zf_precoders(h_prev):
    """Unit-norm zero-forcing precoders: columns of H (H^H H)^-1, normalized."""
    gram = h_prev.conj().T @ h_prev
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or 1.0 / cond <= GRAM_RCOND_MIN:
        raise ConditioningError(
            f"rank-deficient channel (cond ~ {cond:.2e})", condition_number=cond
        )
    raw = h_prev @ np.linalg.inv(gram)
    return raw / np.linalg.norm(raw, axis=0, keepdims=True)


def dominant_left_singular_batch(h_stack):
    """Dominant left singular vectors of a stack of matrices via masked power
    iteration on H H^H. Each trial iterates to its own convergence so results
    do not depend on batch composition."""
    h_stack = np.asarray(h_stack)
    m, nt, _ = h_stack.shape
    b = np.einsum("mik,mjk->mij", h_stack, h_stack.conj())
    v = h_stack.sum(axis=2)
    norms = np.linalg.norm(v, axis=1)
    weak = norms < 1e-12
    if np.any(weak):
        v[weak] = h_stack[weak, :, 0]
        norms = np.linalg.norm(v, axis=1)
    v = v / norms[:, None]
    active = np.ones(m, dtype=bool)
    for _ in range(POWER_ITER_MAX):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        w = np.einsum("mij,mj->mi", b[idx], v[idx])
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        align = np.abs(np.einsum("mi,mi->m", w.conj(), v[idx]))
        v[idx] = w
        active[idx] = (1.0 - align) >= POWER_ITER_TOL
    else:
        raise ConvergenceError("power iteration did not converge")
    # fix the arbitrary phase: largest-magnitude component made real positive
    lead = np.argmax(np.abs(v), axis=1)
    phase = v[np.arange(m), lead]
    v *= (np.abs(phase) / phase)[:, None]
    return v


def common_precoder(h_prev, mode, rng=None):
    """Common-stream precoder: an isotropic random direction or the dominant
    left singular vector of the delayed channel."""
    if mode == "isotropic_random":
        if rng is None:
            raise ValueError("isotropic_random mode needs an rng")
        g = _complex_gaussian(rng, (h_prev.shape[0],))
        return g / np.linalg.norm(g)
    if mode == "dominant_left_singular":
        return dominant_left_singular_batch(h_prev[None])[0]
    raise ConfigError(f"unknown common precoder mode {mode!r}")


def draw_realization(config, derived, seed=None, trial=0):
    """One Monte Carlo channel realization, deterministic per (seed, trial)."""
    if seed is None:
        seed = config.rng_seed
    nt, k = config.num_tx_antennas, config.num_users
    rng = trial_rng(seed, trial)
    isotropic = config.common_precoder_mode == "isotropic_random"
    h_prev, err, g, resamples = draw_trial_variates(rng, nt, k, isotropic)
    eps = derived.epsilon
    h_curr = h_prev * eps[None, :] + err * np.sqrt(1.0 - eps[None, :] ** 2)
    p = zf_precoders(h_prev)
    if isotropic:
        p_c = g / np.linalg.norm(g)
    else:
        p_c = dominant_left_singular_batch(h_prev[None])[0]
    return ChannelRealization(h_prev, h_curr, p_c, p, resamples)


def sinr_common(realization, derived, t, mu, p_mw):
    """Common-stream SINR at every user, evaluated on the current channel."""
    mu = np.asarray(mu, dtype=float)
    h = realization.h_curr
    gain_c = np.abs(h.conj().T @ realization.precoder_common) ** 2
    gains = np.abs(h.conj().T @ realization.precoders_private) ** 2  # (K, K)
    interference = p_mw * t * derived.zeta * (gains @ mu)
    return p_mw * (1.0 - t) * derived.zeta * gain_c / (interference + 1.0)


def sinr_private(realization, derived, t, mu, p_mw):
    """Private-stream SINR at every user after common-stream cancellation."""
    mu = np.asarray(mu, dtype=float)
    h = realization.h_curr
    gains = np.abs(h.conj().T @ realization.precoders_private) ** 2
    own = p_mw * t * derived.zeta * mu * np.diag(gains)
    interference = p_mw * t * derived.zeta * ((gains @ mu) - mu * np.diag(gains))
    return own / (interference + 1.0)


@dataclass(frozen=True)
class FblRateInputs:
    sinr: float
    blocklength: int
    bler: float

    def __post_init__(self):
        if self.sinr < 0:
            raise DomainError("SINR must be nonnegative")
        if self.blocklength < 1:
            raise DomainError("blocklength must be >= 1")
        if not 0.0 < self.bler < 0.5:
            raise DomainError("BLER must lie in (0, 0.5)")


def fbl_rate(inputs):
    """Normal-approximation achievable rate, clamped at zero."""
    gamma = inputs.sinr
    penalty = math.sqrt(
        sf.channel_dispersion(gamma) / inputs.blocklength
    ) * sf.gauss_q_inv(inputs.bler)
    return max(0.0, math.log2(1.0 + gamma) - penalty)


def fbl_rate_array(gamma, blocklength, qinv):
    """Vectorized rate for precomputed Q^-1(beta); gamma may be any shape."""
    gamma = np.asarray(gamma, dtype=float)
    dispersion = (1.0 - (1.0 + gamma) ** -2) * sf.LOG2E_SQ
    rate = np.log2(1.0 + gamma) - np.sqrt(dispersion / blocklength) * qinv
    return np.maximum(rate, 0.0)
