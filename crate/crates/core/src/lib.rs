//! Numerical laboratory for minimum-norm interpolation in high dimensions.
//!
//! The crate provides
//! - special functions and seeded sampling ([`numerics`]),
//! - design and response generation with closed-form excess risk ([`design`]),
//! - basis pursuit, minimum-ℓ2 interpolation and the lasso ([`interpolants`]),
//! - the continuous ℓ2-boosting flow with noise-level stopping ([`flow`]),
//! - the scalar calibration theory for thresholded estimators ([`theory`]),
//! - the five reference experiments and their output writers ([`experiment`]).

pub mod design;
pub mod experiment;
pub mod flow;
pub mod interpolants;
pub mod linalg;
pub mod numerics;
pub mod theory;

pub use design::{
    build_covariance, excess_risk, generate_dataset, CovarianceKind, CovarianceSpec, Dataset, DesignError, SignalSpec,
};
pub use experiment::{
    emit_outputs, fit_rate, run_experiment, CellRecord, ExperimentConfig, ExperimentError, ExperimentResult, Setup,
};
pub use flow::{
    adaptive_threshold, negative_gradient, oracle_threshold, rcv_variance_estimate, run_flow, BoostingTrajectory,
    FlowConfig, FlowError, StopReason, StoppingRule, ThresholdKind,
};
pub use interpolants::{
    basis_pursuit, brute_force_bp_oracle, lasso_coordinate_descent, lasso_cv, min_l2_interpolant, InterpolantSolution,
    LassoFit, SolverError,
};
pub use numerics::{
    gaussian_pdf, gaussian_q, gaussian_q_inverse, mills_bounds, sample, simple_ols, soft_threshold, Ensemble,
    NumericsError, RegressionFit, RngStream,
};
pub use theory::{
    rate_prediction, shifted_moments, solve_isotropic, solve_spiked, stein_identity_check, truncated_second_moment,
    IsotropicCalibration, SpikedCalibration, TheoryError,
};
