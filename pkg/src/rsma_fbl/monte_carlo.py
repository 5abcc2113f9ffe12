"""Sample-average-approximation engine and scheme evaluation.

Realizations are generated per-trial from counter-based substreams (so any
trial is reproducible in isolation) but stored as stacked arrays. Channel
projections onto the precoders are cached separately from the mobility
correlation, so sweeps over velocity, power, blocklength or allocation all
reuse the same expensive draws.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds, channel_model as cm, optimizer as opt, special_functions as sf
from .exceptions import BudgetExceededError, ConfigError

SCHEME_KINDS = (
    "rsma_proposed",
    "rsma_proposed_equal",
    "rsma_exhaustive_equal",
    "sdma",
    "sdma_exhaustive",
    "noma",
    "noma_exhaustive",
)

COARSE_TRIALS = 500
DEFAULT_POINT_BUDGET = 1_000_000


@dataclass
class RateEstimate:
    r_common: float
    r_private: np.ndarray
    sum_rate: float
    min_rate: float
    trials: int
    std_error: np.ndarray  # (K+1,): common first, then private streams
    sum_std_error: float = 0.0

    def __post_init__(self):
        self.r_private = np.asarray(self.r_private, dtype=float)
        self.std_error = np.asarray(self.std_error, dtype=float)


@dataclass
class SchemeSpec:
    kind: str
    scheme_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ConfigError(f"unknown scheme kind {self.kind!r}")
        for key in ("grid_granularity", "t_granularity"):
            g = self.scheme_params.get(key)
            if g is not None and not 0.0 < g <= 1.0:
                raise ConfigError(f"{key} must lie in (0, 1]")


@dataclass
class RealizationBatch:
    """Stacked per-trial draws plus precoder projections.

    Projections are split into delayed-channel and error components so gains
    at any correlation come from one complex combination per user.
    """

    nt: int
    k: int
    seed: int
    mode: str
    h_prev: np.ndarray        # (M, Nt, K)
    err: np.ndarray           # (M, Nt, K)
    precoders: np.ndarray     # (M, Nt, K)
    p_common: np.ndarray      # (M, Nt)
    proj_prev: np.ndarray     # (M, K, K)  <h_prev_k, p_j>
    proj_err: np.ndarray      # (M, K, K)  <e_k, p_j>
    proj_prev_c: np.ndarray   # (M, K)
    proj_err_c: np.ndarray    # (M, K)
    resamples: int

    @property
    def trials(self):
        return self.h_prev.shape[0]


_BATCH_CACHE = {}
_GAIN_CACHE = {}


def clear_caches():
    _BATCH_CACHE.clear()
    _GAIN_CACHE.clear()


def build_batch(config, trials, seed):
    key = (config.num_tx_antennas, config.num_users,
           config.common_precoder_mode, int(seed), int(trials))
    cached = _BATCH_CACHE.get(key)
    if cached is not None:
        return cached

    nt, k = config.num_tx_antennas, config.num_users
    isotropic = config.common_precoder_mode == "isotropic_random"
    h_prev = np.empty((trials, nt, k), dtype=complex)
    err = np.empty((trials, nt, k), dtype=complex)
    g = np.empty((trials, nt), dtype=complex) if isotropic else None
    resamples = 0
    for m in range(trials):
        rng = cm.trial_rng(seed, m)
        h, e, gv, extra = cm.draw_trial_variates(rng, nt, k, isotropic)
        h_prev[m], err[m] = h, e
        if isotropic:
            g[m] = gv
        resamples += extra

    gram = np.einsum("mik,mij->mkj", h_prev.conj(), h_prev)
    raw = np.einsum("mik,mkj->mij", h_prev, np.linalg.inv(gram))
    precoders = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    if isotropic:
        p_common = g / np.linalg.norm(g, axis=1, keepdims=True)
    else:
        p_common = cm.dominant_left_singular_batch(h_prev)

    proj_prev = np.einsum("mik,mij->mkj", h_prev.conj(), precoders)
    proj_err = np.einsum("mik,mij->mkj", err.conj(), precoders)
    proj_prev_c = np.einsum("mik,mi->mk", h_prev.conj(), p_common)
    proj_err_c = np.einsum("mik,mi->mk", err.conj(), p_common)

    batch = RealizationBatch(nt, k, int(seed), config.common_precoder_mode,
                             h_prev, err, precoders, p_common,
                             proj_prev, proj_err, proj_prev_c, proj_err_c,
                             resamples)
    _BATCH_CACHE[key] = batch
    return batch


def gain_tables(config, derived, trials, seed):
    """(gains_private (M,K,K), gains_common (M,K)) at the configured mobility."""
    eps = np.asarray(derived.epsilon, dtype=float)
    key = (config.num_tx_antennas, config.num_users, config.common_precoder_mode,
           int(seed), int(trials), tuple(np.round(eps, 15)))
    cached = _GAIN_CACHE.get(key)
    if cached is not None:
        return cached
    batch = build_batch(config, trials, seed)
    mix = eps[None, :, None]
    mix_err = np.sqrt(1.0 - eps**2)[None, :, None]
    gp = np.abs(mix * batch.proj_prev + mix_err * batch.proj_err) ** 2
    gc = np.abs(eps[None, :] * batch.proj_prev_c
                + np.sqrt(1.0 - eps**2)[None, :] * batch.proj_err_c) ** 2
    _GAIN_CACHE[key] = (gp, gc)
    return gp, gc


def _qinv_common(config):
    return max(sf.gauss_q_inv(b) for b in config.bler_common)


def _per_trial_rates(gp, gc, config, derived, t, mu):
    """Per-trial common and private FBL rates at allocation (t, mu)."""
    mu = np.asarray(mu, dtype=float)
    p_mw = derived.tx_power_mW
    zeta = derived.zeta[None, :]
    interference = p_mw * t * zeta * np.einsum("mkj,j->mk", gp, mu)
    diag = np.einsum("mkk->mk", gp)
    gamma_c = p_mw * (1.0 - t) * zeta * gc / (interference + 1.0)
    own = p_mw * t * zeta * mu[None, :] * diag
    gamma_p = own / (interference - own + 1.0)

    rc = cm.fbl_rate_array(gamma_c.min(axis=1), config.blocklength_common,
                           _qinv_common(config))
    rp = np.empty_like(gamma_p)
    for j in range(config.num_users):
        rp[:, j] = cm.fbl_rate_array(gamma_p[:, j], config.blocklength_private[j],
                                     sf.gauss_q_inv(config.bler_private[j]))
    if t >= 1.0:
        rc = np.zeros_like(rc)
    return rc, rp


def _estimate_from_trials(rc, rp, c):
    m = rc.shape[0]
    r_common = float(rc.mean())
    r_private = rp.mean(axis=0)
    per_trial_sum = rc + rp.sum(axis=1)
    denom = math.sqrt(m)
    se = np.concatenate(([rc.std(ddof=1) if m > 1 else 0.0],
                         rp.std(axis=0, ddof=1) if m > 1 else np.zeros(rp.shape[1])))
    return RateEstimate(
        r_common=r_common,
        r_private=r_private,
        sum_rate=r_common + float(r_private.sum()),
        min_rate=float(np.min(np.asarray(c) + r_private)),
        trials=m,
        std_error=se / denom,
        sum_std_error=float(per_trial_sum.std(ddof=1) / denom) if m > 1 else 0.0,
    )


def saa_rates(allocation, config, derived, trials, seed):
    """Sample-average rates of a fixed allocation over `trials` realizations."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    gp, gc = gain_tables(config, derived, trials, seed)
    rc, rp = _per_trial_rates(gp, gc, config, derived, allocation.t, allocation.mu)
    return _estimate_from_trials(rc, rp, allocation.c)


def _saa_sum_rate(gp, gc, config, derived, t, mu):
    rc, rp = _per_trial_rates(gp, gc, config, derived, t, mu)
    return float(rc.mean() + rp.mean(axis=0).sum())


def _simplex_grid(k, step):
    """All nonnegative k-vectors on the unit simplex with coordinates that
    are integer multiples of `step`."""
    n = int(round(1.0 / step))
    out = []
    for combo in itertools.combinations(range(n + k - 1), k - 1):
        prev = -1
        parts = []
        for c in combo:
            parts.append(c - prev - 1)
            prev = c
        parts.append(n + k - 2 - prev)
        out.append(np.array(parts, dtype=float) * step)
    return out


def noma_allocation(config, derived, ftpa_decay=0.8):
    """Near-far pairing with fractional transmit power allocation.

    Users are sorted by large-scale gain; the strongest pairs with the
    weakest, and so on (odd K leaves a middle singleton). Inter-group power
    is equal; intra-group power goes as gain^(-decay). The strong member of
    each pair runs one SIC layer over its partner's stream.
    """
    zeta = np.asarray(derived.zeta, dtype=float)
    order = np.argsort(-zeta, kind="stable")
    k = zeta.size
    groups = []
    lo, hi = 0, k - 1
    while lo < hi:
        groups.append((int(order[lo]), int(order[hi])))  # (strong, weak)
        lo += 1
        hi -= 1
    if lo == hi:
        groups.append((int(order[lo]),))
    n_groups = len(groups)
    power_share = np.zeros(k)
    for g in groups:
        weights = zeta[list(g)] ** (-ftpa_decay)
        power_share[list(g)] = (1.0 / n_groups) * weights / weights.sum()
    return groups, power_share


def _noma_group_precoders(config, batch, groups):
    """Per-trial group precoders zero-forcing across the strong members."""
    reps = [g[0] for g in groups]
    h_reps = batch.h_prev[:, :, reps]  # (M, Nt, G)
    if len(reps) == 1:
        p = h_reps / np.linalg.norm(h_reps, axis=1, keepdims=True)
        return p
    gram = np.einsum("mik,mij->mkj", h_reps.conj(), h_reps)
    raw = np.einsum("mik,mkj->mij", h_reps, np.linalg.inv(gram))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _noma_trial_rates(config, derived, batch, groups, power_share,
                      precoders=None):
    """Per-trial per-user rates for a NOMA power configuration."""
    eps = np.asarray(derived.epsilon, dtype=float)
    p_mw, zeta = derived.tx_power_mW, np.asarray(derived.zeta, dtype=float)
    if precoders is None:
        precoders = _noma_group_precoders(config, batch, groups)
    proj_prev = np.einsum("mik,mij->mkj", batch.h_prev.conj(), precoders)
    proj_err = np.einsum("mik,mij->mkj", batch.err.conj(), precoders)
    gains = np.abs(eps[None, :, None] * proj_prev
                   + np.sqrt(1.0 - eps**2)[None, :, None] * proj_err) ** 2

    m = batch.trials
    group_power = np.array([power_share[list(g)].sum() for g in groups])
    rates = np.zeros((m, config.num_users))
    for gi, g in enumerate(groups):
        other = [i for i in range(len(groups)) if i != gi]
        for u in g:
            inter = p_mw * zeta[u] * np.einsum(
                "mj,j->m", gains[:, u, other], group_power[other]
            ) if other else np.zeros(m)
            own_gain = gains[:, u, gi]
            if len(g) == 1:
                gamma = p_mw * zeta[u] * power_share[u] * own_gain / (inter + 1.0)
                rates[:, u] = cm.fbl_rate_array(
                    gamma, config.blocklength_private[u],
                    sf.gauss_q_inv(config.bler_private[u]))
                continue
            strong, weak = g
            if u == weak:
                # weak stream must be decodable at both receivers for SIC
                num_w = p_mw * zeta[weak] * power_share[weak] * gains[:, weak, gi]
                den_w = p_mw * zeta[weak] * power_share[strong] * gains[:, weak, gi]
                inter_w = p_mw * zeta[weak] * np.einsum(
                    "mj,j->m", gains[:, weak, other], group_power[other]
                ) if other else np.zeros(m)
                gamma_ww = num_w / (den_w + inter_w + 1.0)
                num_s = p_mw * zeta[strong] * power_share[weak] * gains[:, strong, gi]
                den_s = p_mw * zeta[strong] * power_share[strong] * gains[:, strong, gi]
                inter_s = p_mw * zeta[strong] * np.einsum(
                    "mj,j->m", gains[:, strong, other], group_power[other]
                ) if other else np.zeros(m)
                gamma_ws = num_s / (den_s + inter_s + 1.0)
                qinv = sf.gauss_q_inv(config.bler_private[weak])
                lw = config.blocklength_private[weak]
                rates[:, weak] = np.minimum(
                    cm.fbl_rate_array(gamma_ww, lw, qinv),
                    cm.fbl_rate_array(gamma_ws, lw, qinv))
            else:
                gamma = (p_mw * zeta[strong] * power_share[strong] * own_gain
                         / (inter + 1.0))
                rates[:, strong] = cm.fbl_rate_array(
                    gamma, config.blocklength_private[strong],
                    sf.gauss_q_inv(config.bler_private[strong]))
    return rates


def _noma_estimate(config, derived, trials, seed, power_share, groups):
    batch = build_batch(config, trials, seed)
    rp = _noma_trial_rates(config, derived, batch, groups, power_share)
    rc = np.zeros(trials)
    return _estimate_from_trials(rc, rp, np.zeros(config.num_users))


def definition_error_study(config, derived, trials=50, mc_trials=10_000,
                           seed=None, t=0.5, user=0):
    """Percentage errors of the three moment/shape approximations used by
    the closed-form bounds, measured on random private power splits with the
    probed user's share held at 1/K.

    Returns three arrays of length `trials`: capacity-of-minimum error,
    common dispersion error, private dispersion error (percent).
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    seed = config.rng_seed if seed is None else seed
    k = config.num_users
    gp, gc = gain_tables(config, derived, mc_trials, seed)
    p_mw, zeta = derived.tx_power_mW, derived.zeta[None, :]
    diag = np.einsum("mkk->mk", gp)
    uniform = np.full(k, 1.0 / k)

    def common_terms(mu):
        interference = p_mw * t * zeta * np.einsum("mkj,j->mk", gp, mu)
        gamma_min = (p_mw * (1.0 - t) * zeta * gc / (interference + 1.0)).min(axis=1)
        capacity = float(np.log2(1.0 + gamma_min).mean())
        disp = float(np.sqrt((1.0 - (1.0 + gamma_min) ** -2) * sf.LOG2E_SQ).mean())
        return capacity, disp

    def private_disp(mu):
        interference = p_mw * t * zeta * np.einsum("mkj,j->mk", gp, mu)
        own = p_mw * t * zeta * mu[None, :] * diag
        gamma = own[:, user] / (interference[:, user] - own[:, user] + 1.0)
        return float(np.sqrt((1.0 - (1.0 + gamma) ** -2) * sf.LOG2E_SQ).mean())

    cap_rhs, disp_rhs = common_terms(uniform)
    mu_sym = uniform.copy()  # private reference: equal split of 1 - 1/K
    disp_p_rhs = private_disp(mu_sym)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(0xD15, 0)))
    err_cap, err_disp, err_priv = [], [], []
    for _ in range(trials):
        mu = np.empty(k)
        mu[user] = 1.0 / k
        # Concentration 3 keeps the random splits dispersed around the
        # uniform point instead of piling mass near the simplex corners,
        # which is what "realistic" power settings look like in practice.
        rest = rng.dirichlet(np.full(k - 1, 3.0)) * (1.0 - 1.0 / k)
        mu[np.arange(k) != user] = rest
        cap_lhs, disp_lhs = common_terms(mu)
        err_cap.append(100.0 * abs(cap_lhs - cap_rhs) / cap_rhs)
        err_disp.append(100.0 * abs(disp_lhs - disp_rhs) / disp_rhs)
        err_priv.append(100.0 * abs(private_disp(mu) - disp_p_rhs) / disp_p_rhs)
    return np.array(err_cap), np.array(err_disp), np.array(err_priv)


def _grid_budget_check(n_points, budget):
    if n_points > budget:
        raise BudgetExceededError(
            f"exhaustive grid of {n_points} points exceeds the budget {budget}"
        )


def evaluate_scheme(spec, config, derived, trials, seed):
    """Evaluate one scheme; returns (RateEstimate, PowerAllocation)."""
    k = config.num_users
    uniform = np.full(k, 1.0 / k)
    budget = int(spec.scheme_params.get("point_budget", DEFAULT_POINT_BUDGET))

    if spec.kind == "rsma_proposed":
        settings = opt.OptimizerSettings(saa_trials_for_split=trials)
        report = opt.single_step_update(
            config, derived, settings,
            saa_rates_fn=lambda alloc, m: _split_rates(alloc, config, derived, m, seed),
        )
        alloc = report.allocation
        return saa_rates(alloc, config, derived, trials, seed), alloc

    if spec.kind == "rsma_proposed_equal":
        t_star, _ = opt.solve_global_power(config, derived)
        est0 = saa_rates(opt.PowerAllocation(t_star, uniform, np.zeros(k)),
                         config, derived, trials, seed)
        c = opt.waterfill_common_rate(est0.r_common, est0.r_private)
        alloc = opt.PowerAllocation(t_star, uniform, c)
        return saa_rates(alloc, config, derived, trials, seed), alloc

    if spec.kind == "rsma_exhaustive_equal":
        gran = spec.scheme_params.get("t_granularity", 0.001)
        ts = np.arange(gran, 1.0 + gran / 2, gran)
        _grid_budget_check(ts.size, budget)
        gp, gc = gain_tables(config, derived, COARSE_TRIALS, seed)
        sums = [_saa_sum_rate(gp, gc, config, derived, float(t), uniform) for t in ts]
        t_best = float(ts[int(np.argmax(sums))])
        est0 = saa_rates(opt.PowerAllocation(t_best, uniform, np.zeros(k)),
                         config, derived, trials, seed)
        c = opt.waterfill_common_rate(est0.r_common, est0.r_private)
        alloc = opt.PowerAllocation(t_best, uniform, c)
        return saa_rates(alloc, config, derived, trials, seed), alloc

    if spec.kind == "sdma":
        alloc = opt.PowerAllocation(1.0, uniform, np.zeros(k))
        return saa_rates(alloc, config, derived, trials, seed), alloc

    if spec.kind == "sdma_exhaustive":
        gran = spec.scheme_params.get("grid_granularity", 0.025)
        grid = _simplex_grid(k, gran)
        _grid_budget_check(len(grid), budget)
        gp, gc = gain_tables(config, derived, COARSE_TRIALS, seed)
        best_feas, best_feas_sum = None, -np.inf
        best_minr, best_minr_val = None, -np.inf
        for mu in grid:
            rc, rp = _per_trial_rates(gp, gc, config, derived, 1.0, mu)
            means = rp.mean(axis=0)
            total, worst = float(means.sum()), float(means.min())
            if worst >= config.qos_min_rate and total > best_feas_sum:
                best_feas, best_feas_sum = mu, total
            if worst > best_minr_val:
                best_minr, best_minr_val = mu, worst
        mu = best_feas if best_feas is not None else best_minr
        alloc = opt.PowerAllocation(1.0, mu, np.zeros(k))
        return saa_rates(alloc, config, derived, trials, seed), alloc

    if spec.kind == "noma":
        decay = spec.scheme_params.get("ftpa_decay", 0.8)
        groups, power_share = noma_allocation(config, derived, decay)
        est = _noma_estimate(config, derived, trials, seed, power_share, groups)
        alloc = opt.PowerAllocation(1.0, power_share, np.zeros(k))
        return est, alloc

    if spec.kind == "noma_exhaustive":
        gran = spec.scheme_params.get("grid_granularity", 0.025)
        groups, _ = noma_allocation(config, derived)
        n_groups = len(groups)
        inter_grid = _simplex_grid(n_groups, gran) if n_groups > 1 else [np.array([1.0])]
        intra_axis = np.arange(0.0, 1.0 + gran / 2, gran)
        pair_ids = [i for i, g in enumerate(groups) if len(g) == 2]
        n_points = len(inter_grid) * (len(intra_axis) ** len(pair_ids))
        _grid_budget_check(n_points, budget)

        coarse_batch = build_batch(config, COARSE_TRIALS, seed)
        precoders = _noma_group_precoders(config, coarse_batch, groups)
        best, best_sum = None, -np.inf
        best_minr, best_minr_val = None, -np.inf
        for inter in inter_grid:
            for intra in itertools.product(intra_axis, repeat=len(pair_ids)):
                share = np.zeros(k)
                pair_iter = iter(intra)
                for gi, g in enumerate(groups):
                    if len(g) == 1:
                        share[g[0]] = inter[gi]
                    else:
                        w = next(pair_iter)
                        strong, weak = g
                        share[weak] = inter[gi] * w
                        share[strong] = inter[gi] * (1.0 - w)
                rp = _noma_trial_rates(config, derived, coarse_batch, groups,
                                       share, precoders)
                means = rp.mean(axis=0)
                total, worst = float(means.sum()), float(means.min())
                if worst >= config.qos_min_rate and total > best_sum:
                    best, best_sum = share.copy(), total
                if worst > best_minr_val:
                    best_minr, best_minr_val = share.copy(), worst
        share = best if best is not None else best_minr
        est = _noma_estimate(config, derived, trials, seed, share, groups)
        alloc = opt.PowerAllocation(1.0, share, np.zeros(k))
        return est, alloc

    raise ConfigError(f"unhandled scheme kind {spec.kind!r}")


def _split_rates(allocation, config, derived, trials, seed):
    est = saa_rates(allocation, config, derived, trials, seed)
    return est.r_common, est.r_private


def estimate_csv_header(k):
    return (["scheme", "P_dBm", "velocity", "epsilon", "t", "sum_rate", "min_rate",
             "r_common"] + [f"r_private_{j + 1}" for j in range(k)] + ["M", "seed"])


def estimate_csv_row(scheme_name, config, derived, allocation, estimate, seed):
    return ([scheme_name, config.tx_power_dBm, config.velocities_kmh[0],
             float(derived.epsilon[0]), allocation.t, estimate.sum_rate,
             estimate.min_rate, estimate.r_common]
            + [float(r) for r in estimate.r_private]
            + [estimate.trials, seed])
