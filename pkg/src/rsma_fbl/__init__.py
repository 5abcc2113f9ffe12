"""Finite-blocklength rate-splitting downlink: closed-form ergodic-rate
bounds, power-allocation optimization, and Monte Carlo validation."""

from .bounds import (
    CommonBoundParams,
    GammaParams,
    PrivateBoundParams,
    aggregate_interference_params,
    bound_sum_rate,
    common_cdf,
    common_cdf_params,
    common_rate_lower_bound,
    expected_common_capacity,
    expected_common_sinr,
    gamma_moment_match,
    matched_filter_gain_params,
    private_rate_lower_bound,
    private_sinr_mean,
)
from .channel_model import (
    ChannelRealization,
    DerivedLink,
    SystemConfig,
    default_config,
    derive_link,
    distance_for_gain,
    draw_realization,
    fbl_rate,
    large_scale_gain,
    place_users,
    sinr_common,
    sinr_private,
    time_correlation,
)
from .exceptions import (
    BudgetExceededError,
    ConditioningError,
    ConfigError,
    ConvergenceError,
    DomainError,
    SingularParameterError,
)
from .monte_carlo import (
    RateEstimate,
    SchemeSpec,
    build_batch,
    definition_error_study,
    evaluate_scheme,
    noma_allocation,
    saa_rates,
)
from .optimizer import (
    OptimizationReport,
    OptimizerSettings,
    PowerAllocation,
    single_step_update,
    solve_global_power,
    solve_private_power,
    solve_private_power_qos,
    waterfill_common_rate,
)
from .special_functions import (
    NumericTolerances,
    channel_dispersion,
    exp_integral_generalized,
    gauss_q,
    gauss_q_inv,
)

__version__ = "1.0.0"
