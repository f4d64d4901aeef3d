//! Brute-force reference computations on small instances.

mod dense;
mod grid;

pub use dense::{
    autoregressive_reversibility_residual, dense_a_matrix, dense_gaussian_posterior,
    dense_mh_log_ratio, exact_gaussian_posterior, finite_difference_gradient,
    generalized_marginal_proposal, log_gaussian_density, prior_reversibility_residual,
    proposal_moments, random_symmetric,
};
pub use grid::{
    asymptotic_variance, asymptotic_variances, build_kernel_matrix, check_peskun,
    detailed_balance_residual, discretize_target, discretize_target_2d, peskun_battery,
    spectral_gap, stationarity_residual, test_battery, DiscretizedChain, Grid1d, Grid2d,
    OracleKernel, PeskunRow, ScalarModel, AUX_INTERVALS, AUX_TOLERANCE, GRID_HALF_WIDTH,
    GRID_POINTS, MIN_SPECTRAL_GAP, TRUNCATION_TOLERANCE,
};
