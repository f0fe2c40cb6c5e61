"""Fused extended two-way fixed effects for staggered difference-in-differences.

The estimator fits the fully interacted cohort/time/covariate regression
with an l_q fusion penalty on structured coefficient differences, selects
the penalty level by BIC, and reports cohort-time, cohort, and overall
average treatment effects with asymptotic confidence intervals.
"""

__version__ = "0.1.0"

from .design import build_design, center_response_and_columns, count_params
from .effects import (
    aggregate_fixed,
    aggregate_weighted,
    att_point,
    catt_point,
    ciun_diagnostic,
    effects_report,
    recover_beta_blocks,
)
from .fusion import build_d1, build_d2, build_fusion, penalty_value, reparameterize
from .gls import (
    VarianceComponents,
    estimate_variance_components,
    gls_transform,
    omega_inv_sqrt,
)
from .inference import (
    conf_interval,
    jacobian_cohort_share,
    norm_ppf,
    psi_vector_fixed,
    selected_cov,
    sigma_m_hat,
    var_conservative,
    var_fixed,
    var_weighted,
)
from .panel import (
    CohortCounts,
    PanelDataset,
    cohort_counts,
    load_panel,
    validate_rank_preconditions,
)
from .pipeline import estimate
from .simulate import (
    SimConfig,
    competitor_fit,
    gen_coefficients,
    gen_panel,
    run_study,
    selection_accuracy,
)
from .solver import (
    BridgeFit,
    SolverConfig,
    bridge_fit,
    fit_path_bic,
    lambda_grid,
    ridge_augment,
    scalar_bridge_threshold,
)
