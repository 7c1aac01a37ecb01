//! The five reference experiments: seeded trial grids, deterministic
//! aggregation, rate regressions and output artifacts.
//!
//! Trial `t` at grid point `g` with ensemble `e` always draws from stream
//! `mix_keys([setup, g, e, t])`, trials run on a private rayon pool, and all
//! reductions walk trials in ascending order, so results do not depend on the
//! thread count.

mod config;
mod output;
mod runner;
pub mod svg;

pub use config::{parse_config_text, ConfigError, ExperimentConfig, Setup};
pub use output::{cells_csv, emit_outputs, plot_cells, read_cells_csv, write_cells_csv, CELLS_HEADER};
pub use runner::{
    run_experiment, run_setup1, run_setup2, run_setup3, run_setup4, run_setup5, trial_stream, RETRY_OFFSET,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::BoostingTrajectory;
use crate::numerics::{simple_ols, Ensemble, NumericsError, RegressionFit};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("rate fit: {0}")]
    Fit(#[from] NumericsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// Aggregate over the trials of one (γ, estimator, ensemble) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub setup: Setup,
    /// Realized ratio: p/n, or (p−k*)/n for the spiked setup.
    pub gamma: f64,
    pub n: usize,
    pub p: usize,
    pub estimator: String,
    pub ensemble: Ensemble,
    pub mean_risk: f64,
    pub std_risk: f64,
    pub mean_linf: f64,
    /// Completed trials.
    pub trials: usize,
    /// More than a tenth of the requested trials failed.
    #[serde(default)]
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub estimator: String,
    pub ensemble: Ensemble,
    /// Smallest realized γ included in the regression.
    pub min_gamma: f64,
    pub fit: Option<RegressionFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryPoint {
    pub gamma: f64,
    pub p: usize,
    pub predicted_risk: Option<f64>,
    pub note: Option<String>,
}

/// Per-trial measurements along one boosting path (Setups 4 and 5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrialRecord {
    pub gamma_index: usize,
    pub p: usize,
    pub trial: usize,
    pub stream_id: u64,
    pub retried: bool,
    pub step_eps: f64,
    pub lambda_n: f64,
    pub t_star_index: usize,
    pub rho_at_stop: f64,
    pub rho_before_stop: Option<f64>,
    pub min_index: usize,
    pub last_index: usize,
    pub cv_index: usize,
    pub risk_tstar: f64,
    pub risk_min: f64,
    pub risk_final: f64,
    pub risk_cv_stop: f64,
    pub risk_lasso_cv: f64,
    pub lasso_lambda: f64,
    pub lasso_nonconverged: usize,
    pub u_shaped: bool,
    /// ‖(1/n)Φᵀε‖_∞ on the normalized design.
    pub noise_sup: f64,
    pub noise_event: bool,
    /// (1/n)‖Φ(β(t*)−β*)‖²
    pub basic_lhs: f64,
    /// 3λ_n‖β(t*)−β*‖₁
    pub basic_rhs: f64,
    pub l1_ratio: f64,
    pub events: usize,
    pub max_rho_increase: f64,
    pub cv_max_rho_increase: f64,
    pub adaptive: Option<AdaptiveRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRecord {
    pub sigma2_hat: f64,
    pub sigma_rel_err: f64,
    pub lambda_hat: f64,
    pub lambda_rel_err: f64,
    pub t_hat_index: usize,
    pub risk_that: f64,
    pub support_sizes: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub gamma_index: usize,
    pub p: usize,
    pub trials: usize,
    pub mean_risk_tstar: f64,
    pub mean_risk_min: f64,
    pub mean_risk_final: f64,
    pub mean_risk_cv_stop: f64,
    pub mean_risk_lasso_cv: f64,
    pub u_shaped: usize,
    pub noise_events: usize,
    pub basic_violations: usize,
    pub max_rho_increase: f64,
    pub mean_risk_that: Option<f64>,
    pub mean_sigma_rel_err: Option<f64>,
    pub mean_lambda_rel_err: Option<f64>,
    /// Trials whose adaptive and oracle stopping indices differ by at most 20%.
    pub index_agreement: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub gamma_index: usize,
    pub ensemble: Ensemble,
    pub trial: usize,
    pub errors: Vec<String>,
    /// Whether the retry succeeded.
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub base_seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub cells: Vec<CellRecord>,
    pub fits: Vec<FitRecord>,
    pub theory: Vec<TheoryPoint>,
    pub flow_trials: Vec<FlowTrialRecord>,
    pub flow_summary: Vec<FlowSummary>,
    pub failures: Vec<TrialFailure>,
    pub warnings: Vec<String>,
    /// Full paths, keyed by (grid index, trial); written as CSV artifacts.
    #[serde(skip)]
    pub trajectories: Vec<(usize, usize, BoostingTrajectory)>,
}

impl ExperimentResult {
    /// Some cell lost more than a tenth of its trials.
    pub fn failure_budget_exceeded(&self) -> bool {
        self.cells.iter().any(|c| c.incomplete)
    }

    pub fn cell(&self, gamma_index: usize, estimator: &str, ensemble: Ensemble) -> Option<&CellRecord> {
        let p = self.config.dimension(gamma_index);
        self.cells
            .iter()
            .find(|c| c.p == p && c.estimator == estimator && c.ensemble == ensemble)
    }

    pub fn fit(&self, estimator: &str, ensemble: Ensemble) -> Option<&RegressionFit> {
        self.fits
            .iter()
            .find(|f| f.estimator == estimator && f.ensemble == ensemble)
            .and_then(|f| f.fit.as_ref())
    }
}

/// Regresses mean risk on 1/ln γ over the given cells of one estimator.
pub fn fit_rate(cells: &[CellRecord], estimator: &str) -> Result<RegressionFit, ExperimentError> {
    let chosen: Vec<&CellRecord> = cells.iter().filter(|c| c.estimator == estimator).collect();
    if let Some(c) = chosen.iter().find(|c| !(c.gamma > 1.0)) {
        return Err(
            NumericsError::Domain(format!("1/ln(gamma) is undefined or negative at gamma = {}", c.gamma)).into(),
        );
    }
    let xs: Vec<f64> = chosen.iter().map(|c| 1.0 / c.gamma.ln()).collect();
    let ys: Vec<f64> = chosen.iter().map(|c| c.mean_risk).collect();
    Ok(simple_ols(&xs, &ys)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(gamma: f64, risk: f64, est: &str) -> CellRecord {
        CellRecord {
            setup: Setup::S1,
            gamma,
            n: 10,
            p: (gamma * 10.0) as usize,
            estimator: est.to_string(),
            ensemble: Ensemble::Gaussian,
            mean_risk: risk,
            std_risk: 0.0,
            mean_linf: 0.0,
            trials: 1,
            incomplete: false,
        }
    }

    #[test]
    fn exact_log_law_fits_perfectly() {
        let cells: Vec<CellRecord> = [2.0, 4.0, 8.0, 16.0, 30.0]
            .iter()
            .map(|&g: &f64| cell(g, 0.1 + 0.7 / g.ln(), "bp"))
            .chain([cell(2.0, 5.0, "min_l2")])
            .collect();
        let fit = fit_rate(&cells, "bp").unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.slope - 0.7).abs() < 1e-12);
        assert!((fit.intercept - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fit_guards() {
        assert!(fit_rate(&[cell(4.0, 1.0, "bp")], "bp").is_err());
        let cells = vec![cell(0.8, 1.0, "bp"), cell(2.0, 1.0, "bp"), cell(4.0, 0.5, "bp")];
        assert!(fit_rate(&cells, "bp").is_err());
    }
}
