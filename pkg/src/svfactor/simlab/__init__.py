"""Simulation designs and Monte Carlo studies."""

from .dgp import (
    DgpConfig,
    SimPanel,
    generate_errors,
    generate_panel,
    local_loadings,
    rng_for,
    rotation_h,
    simulate_ou_state,
)
from .studies import (
    RSQ_STATE_SIGMA,
    TABLE_A1_NOISE,
    TABLE_I_BANDWIDTH,
    TABLE_I_KIND,
    TABLE_I_MODELS,
    TABLE_I_PAIRS,
    TABLE_I_SIZES,
    DistributionStudy,
    FactorCurve,
    PowerTable,
    RsqRow,
    acceptance_rate,
    factor_count_curve,
    mc_distribution_study,
    mc_factor_curves,
    mc_power_study,
    mc_rsq_study,
    power_config,
    rsq_config,
    rsq_row,
    two_state_config,
)
