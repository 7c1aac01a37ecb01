use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Ensemble;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl Setup {
    pub const ALL: [Setup; 5] = [Setup::S1, Setup::S2, Setup::S3, Setup::S4, Setup::S5];

    pub fn as_str(self) -> &'static str {
        match self {
            Setup::S1 => "s1",
            Setup::S2 => "s2",
            Setup::S3 => "s3",
            Setup::S4 => "s4",
            Setup::S5 => "s5",
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            Setup::S1 => 1,
            Setup::S2 => 2,
            Setup::S3 => 3,
            Setup::S4 => 4,
            Setup::S5 => 5,
        }
    }

    /// Setups 4 and 5 follow the boosting path instead of solving for interpolants.
    pub fn is_flow(self) -> bool {
        matches!(self, Setup::S4 | Setup::S5)
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        Setup::ALL
            .into_iter()
            .find(|v| v.as_str() == t || v.as_str()[1..] == t)
            .ok_or_else(|| format!("unknown setup `{s}` (expected s1..s5)"))
    }
}

/// Everything that determines the numbers an experiment produces, plus
/// execution details (`threads`, `out_dir`) that must not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub setup: Setup,
    pub n: usize,
    /// Requested overparameterization ratios; the realized ratio after
    /// rounding p is what gets reported.
    pub gammas: Vec<f64>,
    pub trials: usize,
    pub sigma2: f64,
    pub base_seed: u64,
    pub ensembles: Vec<Ensemble>,
    pub k_star: usize,
    pub lambda_head: f64,
    pub lambda_tail: f64,
    pub support_size: usize,
    pub magnitude: f64,
    /// Stopping constant c > 1 in λ_n = σ√(2c ln p / n).
    pub c: f64,
    pub feas_tol: f64,
    pub lasso_tol: f64,
    pub cv_folds: usize,
    /// Flow halts once ρ falls below this fraction of ρ(0).
    pub rho_floor: f64,
    pub step_eps: Option<f64>,
    pub plots: bool,
    pub trajectories: bool,
    #[serde(skip)]
    pub threads: usize,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(setup: Setup) -> Self {
        let (n, gammas, sigma2) = match setup {
            Setup::S1 | Setup::S2 => (200, vec![2.0, 4.0, 8.0, 16.0, 30.0], 1.0),
            Setup::S3 => (200, vec![0.8, 1.0, 1.5, 2.0, 4.0, 8.0, 16.0, 30.0], 1.0),
            Setup::S4 | Setup::S5 => (400, vec![2.0], 1.0),
        };
        let ensembles = match setup {
            Setup::S2 => Ensemble::ALL.to_vec(),
            _ => vec![Ensemble::Gaussian],
        };
        Self {
            setup,
            n,
            gammas,
            trials: 20,
            sigma2,
            base_seed: 0,
            ensembles,
            k_star: 5,
            lambda_head: 100.0,
            lambda_tail: 1.0,
            support_size: 5,
            magnitude: 3.0,
            c: 1.1,
            feas_tol: 1e-8,
            lasso_tol: 1e-4,
            cv_folds: 5,
            rho_floor: 1e-3,
            step_eps: None,
            plots: true,
            trajectories: true,
            threads: 1,
            out_dir: None,
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue {
            key: key.to_string(),
            message,
        };
        let v = value.trim();
        match key {
            "setup" => self.setup = v.parse().map_err(bad)?,
            "n" => self.n = parse_num(v).map_err(bad)?,
            "trials" => self.trials = parse_num(v).map_err(bad)?,
            "seed" | "base_seed" => self.base_seed = parse_num(v).map_err(bad)?,
            "gammas" | "gamma_grid" => {
                self.gammas = split_list(v).map(parse_num).collect::<Result<_, _>>().map_err(bad)?
            }
            "sigma2" => self.sigma2 = parse_num(v).map_err(bad)?,
            "ensembles" | "ensemble" => {
                self.ensembles = split_list(v)
                    .map(|s| s.parse::<Ensemble>().map_err(|e| e.to_string()))
                    .collect::<Result<_, _>>()
                    .map_err(bad)?
            }
            "k_star" => self.k_star = parse_num(v).map_err(bad)?,
            "lambda_head" => self.lambda_head = parse_num(v).map_err(bad)?,
            "lambda_tail" => self.lambda_tail = parse_num(v).map_err(bad)?,
            "support_size" => self.support_size = parse_num(v).map_err(bad)?,
            "magnitude" => self.magnitude = parse_num(v).map_err(bad)?,
            "c" => self.c = parse_num(v).map_err(bad)?,
            "feas_tol" => self.feas_tol = parse_num(v).map_err(bad)?,
            "lasso_tol" => self.lasso_tol = parse_num(v).map_err(bad)?,
            "cv_folds" => self.cv_folds = parse_num(v).map_err(bad)?,
            "rho_floor" => self.rho_floor = parse_num(v).map_err(bad)?,
            "step_eps" => {
                self.step_eps = match v {
                    "" | "auto" => None,
                    _ => Some(parse_num(v).map_err(bad)?),
                }
            }
            "plots" => self.plots = parse_bool(v).map_err(bad)?,
            "trajectories" => self.trajectories = parse_bool(v).map_err(bad)?,
            "threads" => self.threads = parse_num(v).map_err(bad)?,
            "out" | "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Checks every constraint and reports all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("n must be at least 1".to_string());
        }
        if self.trials == 0 {
            problems.push("trials must be at least 1".to_string());
        }
        if self.threads == 0 {
            problems.push("threads must be at least 1".to_string());
        }
        if self.gammas.is_empty() {
            problems.push("gamma grid is empty".to_string());
        }
        if self.gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            problems.push("gamma values must be positive and finite".to_string());
        }
        if !self.gammas.windows(2).all(|w| w[1] > w[0]) {
            problems.push("gamma grid must be strictly increasing".to_string());
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            problems.push(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !(self.feas_tol > 0.0 && self.lasso_tol > 0.0) {
            problems.push("solver tolerances must be positive".to_string());
        }
        if self.ensembles.is_empty() {
            problems.push("at least one ensemble is required".to_string());
        }
        if self.setup != Setup::S2 && self.ensembles.len() > 1 {
            problems.push(format!("setup {} uses a single ensemble", self.setup));
        }
        let increasing = self.gammas.windows(2).all(|w| w[1] > w[0]);
        if self.n > 0 && !self.gammas.is_empty() && increasing {
            let dims: Vec<usize> = (0..self.gammas.len()).map(|i| self.dimension(i)).collect();
            if dims.windows(2).any(|w| w[1] <= w[0]) {
                problems.push("gamma grid collapses to repeated p after rounding".to_string());
            }
            match self.setup {
                Setup::S1 | Setup::S2 => {
                    if let Some(&p) = dims.first() {
                        if p <= self.n {
                            problems.push(format!("interpolation needs p > n (smallest p = {p}, n = {})", self.n));
                        }
                    }
                }
                Setup::S3 => {
                    if self.k_star == 0 {
                        problems.push("k_star must be positive".to_string());
                    }
                    if dims.first() == Some(&self.k_star) {
                        problems.push("tail dimension rounds to zero".to_string());
                    }
                }
                Setup::S4 | Setup::S5 => {
                    if dims.iter().any(|&p| p < 2) {
                        problems.push("flow setups need p >= 2".to_string());
                    }
                }
            }
        }
        if self.setup == Setup::S3 && !(self.lambda_tail > 0.0 && self.lambda_head >= self.lambda_tail) {
            problems.push("spiked spectrum needs lambda_head >= lambda_tail > 0".to_string());
        }
        if self.setup.is_flow() {
            if !(self.c > 1.0) {
                problems.push(format!("stopping constant c must exceed 1, got {}", self.c));
            }
            if self.support_size == 0 || !(self.magnitude.is_finite()) {
                problems.push("flow setups need a nonzero sparse signal".to_string());
            }
            if self.cv_folds < 2 || self.cv_folds > self.n {
                problems.push(format!("cv_folds must lie in [2, n], got {}", self.cv_folds));
            }
            if self.setup == Setup::S5 && self.n < 40 {
                problems.push("adaptive stopping needs n >= 40".to_string());
            }
            if !(0.0..1.0).contains(&self.rho_floor) {
                problems.push(format!("rho_floor must lie in [0, 1), got {}", self.rho_floor));
            }
            if let Some(e) = self.step_eps {
                if !(e > 0.0 && e.is_finite()) {
                    problems.push(format!("step_eps must be positive, got {e}"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Number of features for grid point `index`.
    pub fn dimension(&self, index: usize) -> usize {
        let scaled = (self.gammas[index] * self.n as f64).round() as usize;
        match self.setup {
            Setup::S3 => self.k_star + scaled,
            _ => scaled,
        }
    }

    /// Ratio actually simulated at grid point `index`.
    pub fn realized_gamma(&self, index: usize) -> f64 {
        let p = self.dimension(index);
        match self.setup {
            Setup::S3 => (p - self.k_star) as f64 / self.n as f64,
            _ => p as f64 / self.n as f64,
        }
    }

    /// FNV-1a digest of the canonical JSON form (execution details excluded).
    pub fn hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// Parses flat `key = value` text; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        let key = k.trim().to_ascii_lowercase().replace('-', "_");
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                message: "empty key".to_string(),
            });
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_and_overrides() {
        let text = "# smoke\nsetup = s3\nn=50\ngammas = 0.8, 2,4 # grid\nensembles=gaussian\n";
        let pairs = parse_config_text(text).unwrap();
        assert_eq!(pairs[0], ("setup".to_string(), "s3".to_string()));
        let mut cfg = ExperimentConfig::defaults(Setup::S3);
        for (k, v) in &pairs {
            cfg.set(k, v).unwrap();
        }
        assert_eq!(cfg.n, 50);
        assert_eq!(cfg.gammas, vec![0.8, 2.0, 4.0]);
        assert_eq!(cfg.dimension(0), 45);
        assert!((cfg.realized_gamma(0) - 0.8).abs() < 1e-15);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_config_text("n 20"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        let mut cfg = ExperimentConfig::defaults(Setup::S1);
        assert!(matches!(cfg.set("bogus", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(cfg.set("n", "-3").is_err());
        cfg.gammas = vec![4.0, 2.0];
        cfg.trials = 0;
        match cfg.validate() {
            Err(ConfigError::Invalid(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
        let mut cfg = ExperimentConfig::defaults(Setup::S1);
        cfg.gammas = vec![0.5, 2.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn realized_gamma_records_rounding() {
        let mut cfg = ExperimentConfig::defaults(Setup::S1);
        cfg.n = 30;
        cfg.gammas = vec![2.51];
        assert_eq!(cfg.dimension(0), 75);
        assert_eq!(cfg.realized_gamma(0), 2.5);
    }

    #[test]
    fn hash_ignores_execution_details() {
        let a = ExperimentConfig::defaults(Setup::S1);
        let mut b = a.clone();
        b.threads = 8;
        b.out_dir = Some("/tmp/x".into());
        assert_eq!(a.hash(), b.hash());
        b.base_seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn setup_names() {
        assert_eq!("S4".parse::<Setup>().unwrap(), Setup::S4);
        assert_eq!("2".parse::<Setup>().unwrap(), Setup::S2);
        assert!("s9".parse::<Setup>().is_err());
    }
}
