"""Power allocation and common-rate splitting.

The single-step update: optimize the global power coefficient t on the
closed-form sum-rate bound, branch on whether the common stream stays
active (t* <= 0.5), then optimize the private power split (with QoS
constraints when the common stream is off) and finally split the common
rate across users by water-filling on sample-average rate estimates.

The inner solver is SLSQP (a sequential-quadratic-programming local
search with quasi-Newton curvature) wrapped so that runs are
deterministic, traced, and safeguarded by a coarse multistart so the
returned point tracks the exhaustive-grid optimum of the same objective.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import bounds
from .exceptions import DomainError

QOS_FALLBACK_SLACK = 1e-9


@dataclass
class OptimizerSettings:
    max_iterations: int = 50
    gradient_step: float = 1e-5
    convergence_tol: float = 1e-6
    constraint_tol: float = 1e-8
    saa_trials_for_split: int = 10_000
    branch_threshold: float = 0.5

    def __post_init__(self):
        for name in ("max_iterations", "gradient_step", "convergence_tol",
                     "constraint_tol", "saa_trials_for_split", "branch_threshold"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")


@dataclass
class PowerAllocation:
    t: float
    mu: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if not 0.0 <= self.t <= 1.0:
            raise DomainError(f"t={self.t} outside [0, 1]")
        if abs(self.mu.sum() - 1.0) > 1e-9 or np.any(self.mu < -1e-12):
            raise DomainError("mu must lie on the unit simplex")
        if np.any(self.c < -1e-12):
            raise DomainError("common-rate shares must be nonnegative")

    def to_dict(self):
        return {"t": self.t, "mu": self.mu.tolist(), "c": self.c.tolist()}


@dataclass
class SearchResult:
    x: np.ndarray
    objective: float
    trace: list
    iterations: int
    feasible: bool
    max_violation: float
    restoration_used: bool = False
    violated: list = field(default_factory=list)


def central_difference_grad(fun, x, h_rel):
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = h_rel * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return grad


def _violation(x, eq_cons, ineq_cons, lo=None, hi=None):
    v = 0.0
    for con in eq_cons:
        v = max(v, float(np.max(np.abs(np.atleast_1d(con(x))))))
    for con in ineq_cons:
        v = max(v, float(np.max(np.maximum(-np.atleast_1d(con(x)), 0.0))))
    if lo is not None:
        v = max(v, float(np.max(np.maximum(lo - x, 0.0))))
    if hi is not None:
        v = max(v, float(np.max(np.maximum(x - hi, 0.0))))
    return v


def constrained_local_search(objective, equality_constraints, inequality_constraints,
                             x0, settings, bounds_box=None):
    """Deterministic SQP-style local search (minimization convention).

    Returns the best feasible iterate seen; the trace records the incumbent
    best feasible objective at each major iteration.
    """
    x0 = np.asarray(x0, dtype=float)
    eq = list(equality_constraints)
    ineq = list(inequality_constraints)
    lo = hi = None
    if bounds_box is not None:
        lo = np.array([b[0] for b in bounds_box], dtype=float)
        hi = np.array([b[1] for b in bounds_box], dtype=float)

    grad = lambda x: central_difference_grad(objective, x, settings.gradient_step)
    cons = [{"type": "eq", "fun": c} for c in eq]
    cons += [{"type": "ineq", "fun": c} for c in ineq]

    best = {"x": x0.copy(), "f": math.inf}
    trace = []

    def consider(x):
        if _violation(x, eq, ineq, lo, hi) <= settings.constraint_tol:
            f = objective(x)
            if f < best["f"]:
                best["x"], best["f"] = np.asarray(x, dtype=float).copy(), f

    consider(x0)

    def callback(xk):
        consider(xk)
        trace.append(best["f"] if math.isfinite(best["f"]) else objective(xk))

    res = minimize(
        objective, x0, jac=grad, method="SLSQP",
        bounds=bounds_box, constraints=cons, callback=callback,
        options={"maxiter": settings.max_iterations, "ftol": settings.convergence_tol},
    )
    consider(res.x)

    if math.isfinite(best["f"]):
        x_star, f_star, feasible = best["x"], best["f"], True
    else:
        x_star, f_star, feasible = np.asarray(res.x, float), float(res.fun), False
    return SearchResult(
        x=x_star,
        objective=f_star,
        trace=trace,
        iterations=int(res.nit),
        feasible=feasible,
        max_violation=_violation(x_star, eq, ineq, lo, hi),
    )


def grid_argmax_t(config, derived, mu, granularity=0.001):
    """Exhaustive-grid argmax of the closed-form sum-rate bound over t."""
    ts = np.arange(0.0, 1.0 + granularity / 2, granularity)
    vals = [bounds.bound_sum_rate(t, mu, config, derived) for t in ts]
    return float(ts[int(np.argmax(vals))]), float(np.max(vals))


def solve_global_power(config, derived, settings=None, mu=None):
    """Global power coefficient t maximizing the closed-form bound (P1)."""
    settings = settings or OptimizerSettings()
    k = config.num_users
    mu = np.full(k, 1.0 / k) if mu is None else np.asarray(mu, dtype=float)
    objective = lambda x: -bounds.bound_sum_rate(float(x[0]), mu, config, derived)
    box = [(0.0, 1.0)]

    result = constrained_local_search(objective, [], [], np.array([0.5]),
                                      settings, bounds_box=box)
    # coarse safeguard: the bound over t can be bimodal, with a narrow peak
    # hugging t=0 at high SNR, so the scan mixes linear and log spacing
    coarse = np.concatenate([
        np.linspace(0.0, 1.0, 51),
        np.geomspace(1e-4, 0.02, 12),
    ])
    coarse_vals = np.array([objective([t]) for t in coarse])
    ib = int(np.argmin(coarse_vals))
    if coarse_vals[ib] < result.objective - 1e-12:
        retry = constrained_local_search(objective, [], [], np.array([coarse[ib]]),
                                         settings, bounds_box=box)
        if retry.objective < result.objective:
            result = retry
        if coarse_vals[ib] < result.objective:
            result = SearchResult(
                x=np.array([coarse[ib]]), objective=float(coarse_vals[ib]),
                trace=result.trace, iterations=result.iterations,
                feasible=True, max_violation=0.0,
            )
    return float(np.clip(result.x[0], 0.0, 1.0)), result


def _simplex_starts(config, derived):
    k = config.num_users
    zeta = np.asarray(derived.zeta, dtype=float)
    starts = [zeta / zeta.sum(), np.full(k, 1.0 / k)]
    return starts


def solve_private_power(t_star, config, derived, settings=None):
    """Private power split maximizing the sum of private bounds (P2)."""
    settings = settings or OptimizerSettings()
    k = config.num_users

    def objective(mu):
        return -sum(
            bounds.private_rate_lower_bound(t_star, mu, config, derived, j)
            for j in range(k)
        )

    eq = [lambda mu: np.sum(mu) - 1.0]
    box = [(0.0, 1.0)] * k
    best = None
    for x0 in _simplex_starts(config, derived):
        res = constrained_local_search(objective, eq, [], x0, settings, bounds_box=box)
        if best is None or res.objective < best.objective:
            best = res
    uniform_obj = objective(np.full(k, 1.0 / k))
    if uniform_obj < best.objective:  # never worse than the uniform split
        best = SearchResult(np.full(k, 1.0 / k), uniform_obj, best.trace,
                            best.iterations, True, 0.0)
    mu = np.clip(best.x, 0.0, None)
    mu = mu / mu.sum()
    return mu, best


def solve_private_power_qos(config, derived, settings=None, t_star=1.0):
    """Private power split under per-user QoS rate constraints (P4)."""
    settings = settings or OptimizerSettings()
    k = config.num_users
    r_min = config.qos_min_rate

    def rates(mu):
        return np.array([
            bounds.private_rate_lower_bound(t_star, mu, config, derived, j)
            for j in range(k)
        ])

    objective = lambda mu: -float(np.sum(rates(mu)))
    eq = [lambda mu: np.sum(mu) - 1.0]
    ineq = [lambda mu: rates(mu) - r_min]
    box = [(0.0, 1.0)] * k
    x0 = np.full(k, 1.0 / k)

    res = constrained_local_search(objective, eq, ineq, x0, settings, bounds_box=box)
    if not res.feasible:
        # restoration: push toward the max-min feasible region, then retry
        restore = _max_min_private(config, derived, settings, t_star)
        retry = constrained_local_search(objective, eq, ineq, restore, settings,
                                         bounds_box=box)
        if retry.feasible:
            retry.restoration_used = True
            res = retry
        else:
            worst = rates(restore)
            res.restoration_used = True
            res.x = restore
            res.objective = objective(restore)
            res.max_violation = float(np.max(np.maximum(r_min - worst, 0.0)))
            res.violated = [int(j) for j in np.nonzero(worst < r_min - QOS_FALLBACK_SLACK)[0]]
            return None, res
    mu = np.clip(res.x, 0.0, None)
    mu = mu / mu.sum()
    return mu, res


def _max_min_private(config, derived, settings, t_star):
    """Feasibility restoration: maximize the worst private bound."""
    k = config.num_users

    def neg_min_rate(z):
        mu = np.clip(z, 1e-9, None)
        mu = mu / mu.sum()
        return -min(
            bounds.private_rate_lower_bound(t_star, mu, config, derived, j)
            for j in range(k)
        )

    res = minimize(neg_min_rate, np.full(k, 1.0 / k), method="Nelder-Mead",
                   options={"maxiter": 400, "xatol": 1e-6, "fatol": 1e-8})
    mu = np.clip(res.x, 1e-9, None)
    return mu / mu.sum()


def waterfill_common_rate(r_c, r_private):
    """Split the common rate to maximize the minimum total per-user rate.

    Level rule: with private rates sorted ascending, the candidate level at
    group size j is (r_c + sum of the j smallest rates) / j; shrink j until
    the j-th smallest rate no longer exceeds the level.
    """
    r_private = np.asarray(r_private, dtype=float)
    if r_c < 0 or np.any(r_private < 0):
        raise DomainError("rates must be nonnegative")
    if r_c == 0.0:
        return np.zeros_like(r_private)
    order = np.argsort(r_private, kind="stable")
    sorted_rates = r_private[order]
    k = r_private.size
    level = None
    for j in range(k, 0, -1):
        level = (r_c + float(np.sum(sorted_rates[:j]))) / j
        if sorted_rates[j - 1] <= level:
            break
    c = np.maximum(0.0, level - r_private)
    dust = r_c - c.sum()
    c[int(np.argmax(c))] += dust
    return c


@dataclass
class OptimizationReport:
    allocation: PowerAllocation
    iterations_p1: int
    iterations_p2_or_p4: int
    objective_trace: list
    common_active: bool
    feasibility: dict
    t_raw: float
    branch: str
    saa_common_rate: float = 0.0
    saa_private_rates: list = field(default_factory=list)
    restoration_used: bool = False
    qos_feasible: bool = True
    violated_users: list = field(default_factory=list)

    def to_dict(self):
        return {
            "allocation": self.allocation.to_dict(),
            "iterations_p1": self.iterations_p1,
            "iterations_p2_or_p4": self.iterations_p2_or_p4,
            "objective_trace": [float(v) for v in self.objective_trace],
            "common_active": self.common_active,
            "feasibility": {k: float(v) for k, v in self.feasibility.items()},
            "t_raw": self.t_raw,
            "branch": self.branch,
            "saa_common_rate": self.saa_common_rate,
            "saa_private_rates": [float(v) for v in self.saa_private_rates],
            "restoration_used": self.restoration_used,
            "qos_feasible": self.qos_feasible,
            "violated_users": self.violated_users,
        }


def single_step_update(config, derived, settings=None, saa_rates_fn=None):
    """Full pipeline: P1 -> branch -> (P2 + SAA + water-fill) or P4.

    `saa_rates_fn(allocation, trials) -> (r_common, r_private)` supplies the
    sample-average rates used for the common-rate split; the Monte Carlo
    module provides it (kept injectable to avoid a circular import).
    """
    settings = settings or OptimizerSettings()
    if saa_rates_fn is None:
        from .monte_carlo import saa_rates

        def saa_rates_fn(allocation, trials):
            est = saa_rates(allocation, config, derived, trials, config.rng_seed)
            return est.r_common, est.r_private

    k = config.num_users
    t_raw, p1 = solve_global_power(config, derived, settings)
    trace = list(p1.trace)

    if t_raw > settings.branch_threshold:
        mu, p_res = solve_private_power_qos(config, derived, settings, t_star=1.0)
        trace += p_res.trace
        qos_ok = mu is not None
        alloc = PowerAllocation(
            t=1.0,
            mu=mu if qos_ok else np.full(k, 1.0 / k) if p_res.x is None else p_res.x,
            c=np.zeros(k),
        )
        rates_k = np.array([
            bounds.private_rate_lower_bound(1.0, alloc.mu, config, derived, j)
            for j in range(k)
        ])
        feas = {
            "simplex_residual": abs(alloc.mu.sum() - 1.0),
            "qos_residual": float(np.max(np.maximum(config.qos_min_rate - rates_k, 0.0))),
            "rate_split_residual": 0.0,
        }
        return OptimizationReport(
            allocation=alloc,
            iterations_p1=p1.iterations,
            iterations_p2_or_p4=p_res.iterations,
            objective_trace=trace,
            common_active=False,
            feasibility=feas,
            t_raw=t_raw,
            branch="qos_private_only",
            restoration_used=p_res.restoration_used,
            qos_feasible=qos_ok,
            violated_users=list(p_res.violated),
        )

    mu, p2 = solve_private_power(t_raw, config, derived, settings)
    trace += p2.trace
    interim = PowerAllocation(t=t_raw, mu=mu, c=np.zeros(k))
    r_common, r_private = saa_rates_fn(interim, settings.saa_trials_for_split)
    c = waterfill_common_rate(r_common, np.asarray(r_private))
    alloc = PowerAllocation(t=t_raw, mu=mu, c=c)
    totals = c + np.asarray(r_private)
    feas = {
        "simplex_residual": abs(alloc.mu.sum() - 1.0),
        "qos_residual": float(np.max(np.maximum(config.qos_min_rate - totals, 0.0))),
        "rate_split_residual": abs(c.sum() - r_common),
    }
    return OptimizationReport(
        allocation=alloc,
        iterations_p1=p1.iterations,
        iterations_p2_or_p4=p2.iterations,
        objective_trace=trace,
        common_active=True,
        feasibility=feas,
        t_raw=t_raw,
        branch="common_active",
        saa_common_rate=float(r_common),
        saa_private_rates=[float(v) for v in r_private],
        restoration_used=False,
        qos_feasible=feas["qos_residual"] <= 1e-6,
        violated_users=[int(j) for j in
                        np.flatnonzero(totals < config.qos_min_rate - 1e-6)],
    )
