//! Covariance specifications, synthetic regression datasets and the exact
//! excess risk under a known diagonal covariance.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{draw, student_t4, Ensemble, RngStream};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("invalid covariance spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("column {0} is identically zero")]
    ZeroColumn(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset file {path}: {message}")]
    Format { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Isotropic,
    SpikedIsotropic,
}

/// Diagonal covariance: `k_star` head eigenvalues followed by a flat tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub p: usize,
    pub k_star: usize,
    pub lambda_head: f64,
    pub lambda_tail: f64,
    /// Tr(Σ_T)/‖Σ_T‖_op
    pub r1: f64,
    /// Tr(Σ_T)²/‖Σ_T‖_F²
    pub r2: f64,
}

impl CovarianceSpec {
    pub fn eigenvalue(&self, j: usize) -> f64 {
        if j < self.k_star {
            self.lambda_head
        } else {
            self.lambda_tail
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.p).map(|j| self.eigenvalue(j)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.k_star as f64 * self.lambda_head + self.tail_dim() as f64 * self.lambda_tail
    }

    pub fn tail_dim(&self) -> usize {
        self.p - self.k_star
    }

    pub fn isotropic(p: usize) -> Result<Self, DesignError> {
        build_covariance(CovarianceKind::Isotropic, p, 0, 1.0, 1.0)
    }
}

pub fn build_covariance(
    kind: CovarianceKind,
    p: usize,
    k_star: usize,
    lambda_head: f64,
    lambda_tail: f64,
) -> Result<CovarianceSpec, DesignError> {
    let mut problems = Vec::new();
    if p == 0 {
        problems.push("p must be at least 1".to_string());
    }
    if !(lambda_tail > 0.0 && lambda_tail.is_finite()) {
        problems.push(format!("lambda_tail must be positive, got {lambda_tail}"));
    }
    let lambda_head = match kind {
        CovarianceKind::Isotropic => {
            if k_star != 0 {
                problems.push(format!("isotropic covariance requires k_star = 0, got {k_star}"));
            }
            lambda_tail
        }
        CovarianceKind::SpikedIsotropic => {
            if k_star == 0 {
                problems.push("spiked covariance requires k_star > 0".to_string());
            }
            if k_star >= p {
                problems.push(format!("k_star must be below p ({k_star} >= {p})"));
            }
            if !(lambda_head.is_finite() && lambda_head >= lambda_tail) {
                problems.push(format!(
                    "lambda_head must be >= lambda_tail ({lambda_head} < {lambda_tail})"
                ));
            }
            lambda_head
        }
    };
    if !problems.is_empty() {
        return Err(DesignError::InvalidSpec(problems));
    }
    // Isotropic tail: both effective ranks equal the tail dimension.
    let tail = (p - k_star) as f64;
    Ok(CovarianceSpec {
        kind,
        p,
        k_star,
        lambda_head,
        lambda_tail,
        r1: tail,
        r2: tail,
    })
}

/// Sparse ground truth placed on the leading coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub support_size: usize,
    pub magnitude: f64,
    /// Draw a random sign per support coordinate instead of all positive.
    #[serde(default)]
    pub random_signs: bool,
}

impl SignalSpec {
    pub fn pure_noise() -> Self {
        Self {
            support_size: 0,
            magnitude: 0.0,
            random_signs: false,
        }
    }

    pub fn sparse(support_size: usize, magnitude: f64) -> Self {
        Self {
            support_size,
            magnitude,
            random_signs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n×p design; column-major so that features are contiguous.
    pub phi: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Ground truth in the original (unnormalized) coordinates.
    pub beta_star: DVector<f64>,
    pub noise: DVector<f64>,
    pub sigma2: f64,
    pub cov: CovarianceSpec,
    pub ensemble: Ensemble,
    pub base_seed: u64,
    pub stream_id: u64,
    /// Factors f_j with current column j = original column j / f_j.
    pub col_scale: Option<Vec<f64>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn p(&self) -> usize {
        self.phi.ncols()
    }

    /// Column j as a contiguous slice.
    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.phi.as_slice()[j * n..(j + 1) * n]
    }

    /// Ground truth expressed in the current column scaling.
    pub fn beta_star_current(&self) -> DVector<f64> {
        match &self.col_scale {
            None => self.beta_star.clone(),
            Some(s) => DVector::from_iterator(self.p(), self.beta_star.iter().zip(s).map(|(b, f)| b * f)),
        }
    }

    /// Maps a coefficient vector in current coordinates back to the original ones.
    pub fn to_original(&self, beta: &[f64]) -> Vec<f64> {
        match &self.col_scale {
            None => beta.to_vec(),
            Some(s) => beta.iter().zip(s).map(|(b, f)| b / f).collect(),
        }
    }

    /// Builds a dataset restricted to `rows`, keeping the ground truth and
    /// current scaling. Used for sample splitting.
    pub fn subset_rows(&self, rows: &[usize]) -> Dataset {
        let phi = self.phi.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let noise = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.noise[i]));
        Dataset {
            phi,
            y,
            noise,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            phi: DMatrix::zeros(0, 0),
            y: DVector::zeros(0),
            beta_star: self.beta_star.clone(),
            noise: DVector::zeros(0),
            sigma2: self.sigma2,
            cov: self.cov.clone(),
            ensemble: self.ensemble,
            base_seed: self.base_seed,
            stream_id: self.stream_id,
            col_scale: self.col_scale.clone(),
        }
    }

    /// Builds a dataset directly from arrays; mostly for small hand-made cases.
    pub fn from_parts(phi: DMatrix<f64>, y: DVector<f64>) -> Result<Dataset, DesignError> {
        if phi.nrows() != y.len() {
            return Err(DesignError::DimensionMismatch {
                expected: phi.nrows(),
                got: y.len(),
            });
        }
        let p = phi.ncols();
        Ok(Dataset {
            cov: CovarianceSpec::isotropic(p)?,
            noise: y.clone(),
            phi,
            y,
            beta_star: DVector::zeros(p),
            sigma2: 0.0,
            ensemble: Ensemble::Gaussian,
            base_seed: 0,
            stream_id: 0,
            col_scale: None,
        })
    }
}

pub fn generate_dataset(
    cov: &CovarianceSpec,
    signal: &SignalSpec,
    n: usize,
    sigma2: f64,
    ensemble: Ensemble,
    stream: RngStream,
) -> Result<Dataset, DesignError> {
    if n == 0 {
        return Err(DesignError::InvalidArgument("n must be at least 1".into()));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(DesignError::InvalidArgument(format!(
            "noise variance must be nonnegative, got {sigma2}"
        )));
    }
    let p = cov.p;
    let s = signal.support_size;
    let limit = if cov.kind == CovarianceKind::SpikedIsotropic {
        cov.k_star
    } else {
        p
    };
    if s > limit {
        return Err(DesignError::InvalidArgument(format!(
            "signal support {s} exceeds the admissible {limit} leading coordinates"
        )));
    }

    let mut rng = stream.rng();
    let t4 = student_t4();
    let mut data = vec![0.0; n * p];
    for (j, col) in data.chunks_mut(n).enumerate() {
        let scale = cov.eigenvalue(j).sqrt();
        for v in col.iter_mut() {
            *v = scale * draw(&mut rng, ensemble, &t4);
        }
    }
    let phi = DMatrix::from_vec(n, p, data);

    let sigma = sigma2.sqrt();
    let noise = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    });
    let mut beta_star = DVector::zeros(p);
    for j in 0..s {
        let sign = if signal.random_signs && rand::Rng::random::<bool>(&mut rng) {
            -1.0
        } else {
            1.0
        };
        beta_star[j] = sign * signal.magnitude;
    }
    let mut y = noise.clone();
    for j in 0..s {
        let b = beta_star[j];
        let col = &phi.as_slice()[j * n..(j + 1) * n];
        for (yi, x) in y.iter_mut().zip(col) {
            *yi += b * x;
        }
    }
    Ok(Dataset {
        phi,
        y,
        beta_star,
        noise,
        sigma2,
        cov: cov.clone(),
        ensemble,
        base_seed: stream.base_seed,
        stream_id: stream.stream_id,
        col_scale: None,
    })
}

/// (β̂−β*)ᵀΣ(β̂−β*) with β̂ given in the dataset's current column scaling.
pub fn excess_risk(beta_hat: &[f64], dataset: &Dataset) -> Result<f64, DesignError> {
    let p = dataset.p();
    if beta_hat.len() != p {
        return Err(DesignError::DimensionMismatch {
            expected: p,
            got: beta_hat.len(),
        });
    }
    Ok(excess_risk_unchecked(beta_hat, dataset))
}

pub(crate) fn excess_risk_unchecked(beta_hat: &[f64], dataset: &Dataset) -> f64 {
    let cov = &dataset.cov;
    let mut total = 0.0;
    match &dataset.col_scale {
        None => {
            for (j, (b, t)) in beta_hat.iter().zip(dataset.beta_star.iter()).enumerate() {
                let e = b - t;
                total += cov.eigenvalue(j) * e * e;
            }
        }
        Some(scale) => {
            for (j, ((b, t), f)) in beta_hat.iter().zip(dataset.beta_star.iter()).zip(scale).enumerate() {
                let e = b / f - t;
                total += cov.eigenvalue(j) * e * e;
            }
        }
    }
    total
}

/// Rescales every column to (1/n)‖Φ_j‖² = 1, recording the factors.
pub fn column_normalize(dataset: &Dataset) -> Result<Dataset, DesignError> {
    let n = dataset.n();
    let mut out = dataset.clone();
    let prior = dataset.col_scale.clone().unwrap_or_else(|| vec![1.0; dataset.p()]);
    let mut scales = Vec::with_capacity(dataset.p());
    for (j, col) in out.phi.as_mut_slice().chunks_mut(n).enumerate() {
        let ms = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if !(ms > 0.0) {
            return Err(DesignError::ZeroColumn(j));
        }
        let f = ms.sqrt();
        if f != 1.0 {
            for v in col.iter_mut() {
                *v /= f;
            }
        }
        scales.push(f * prior[j]);
    }
    out.col_scale = Some(scales);
    Ok(out)
}

/// Undoes [`column_normalize`].
pub fn denormalize(dataset: &Dataset) -> Dataset {
    let mut out = dataset.clone();
    if let Some(scales) = &dataset.col_scale {
        let n = dataset.n();
        for (col, f) in out.phi.as_mut_slice().chunks_mut(n).zip(scales) {
            for v in col.iter_mut() {
                *v *= f;
            }
        }
    }
    out.col_scale = None;
    out
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    n: usize,
    p: usize,
    base_seed: u64,
    stream_id: u64,
    ensemble: Ensemble,
    sigma2: f64,
    covariance: CovarianceSpec,
    col_scale: Option<Vec<f64>>,
    beta_star: Vec<f64>,
    noise: Vec<f64>,
    y: Vec<f64>,
    /// Column-major design entries.
    phi: Vec<f64>,
}

const DATASET_FORMAT: &str = "interp-lab-dataset-v1";

/// Writes a JSON container that reproduces the dataset bit-exactly.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DesignError> {
    let file = DatasetFile {
        format: DATASET_FORMAT.to_string(),
        n: dataset.n(),
        p: dataset.p(),
        base_seed: dataset.base_seed,
        stream_id: dataset.stream_id,
        ensemble: dataset.ensemble,
        sigma2: dataset.sigma2,
        covariance: dataset.cov.clone(),
        col_scale: dataset.col_scale.clone(),
        beta_star: dataset.beta_star.as_slice().to_vec(),
        noise: dataset.noise.as_slice().to_vec(),
        y: dataset.y.as_slice().to_vec(),
        phi: dataset.phi.as_slice().to_vec(),
    };
    let text = serde_json::to_string(&file).map_err(|e| DesignError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|source| DesignError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DesignError> {
    let ctx = || path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DesignError::Io { path: ctx(), source })?;
    let f: DatasetFile = serde_json::from_str(&text).map_err(|e| DesignError::Format {
        path: ctx(),
        message: e.to_string(),
    })?;
    if f.format != DATASET_FORMAT {
        return Err(DesignError::Format {
            path: ctx(),
            message: format!("unsupported format tag '{}'", f.format),
        });
    }
    if f.phi.len() != f.n * f.p || f.y.len() != f.n || f.noise.len() != f.n || f.beta_star.len() != f.p {
        return Err(DesignError::Format {
            path: ctx(),
            message: "array lengths disagree with header".into(),
        });
    }
    Ok(Dataset {
        phi: DMatrix::from_vec(f.n, f.p, f.phi),
        y: DVector::from_vec(f.y),
        beta_star: DVector::from_vec(f.beta_star),
        noise: DVector::from_vec(f.noise),
        sigma2: f.sigma2,
        cov: f.covariance,
        ensemble: f.ensemble,
        base_seed: f.base_seed,
        stream_id: f.stream_id,
        col_scale: f.col_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        let iso = build_covariance(CovarianceKind::Isotropic, 100, 0, 0.0, 1.0).unwrap();
        assert_eq!(iso.r2, 100.0);
        assert_eq!(iso.r1, 100.0);
        let spiked = build_covariance(CovarianceKind::SpikedIsotropic, 1605, 5, 100.0, 1.0).unwrap();
        assert_eq!(spiked.r2, 1600.0);
        assert_eq!(spiked.trace(), 2100.0);
        assert_eq!(spiked.eigenvalue(4), 100.0);
        assert_eq!(spiked.eigenvalue(5), 1.0);
        match build_covariance(CovarianceKind::SpikedIsotropic, 5, 5, 100.0, 1.0) {
            Err(DesignError::InvalidSpec(v)) => assert!(v.iter().any(|m| m.contains("k_star"))),
            other => panic!("expected invalid spec, got {other:?}"),
        }
        match build_covariance(CovarianceKind::SpikedIsotropic, 5, 0, 0.5, -1.0) {
            Err(DesignError::InvalidSpec(v)) => assert!(v.len() >= 2),
            other => panic!("expected invalid spec, got {other:?}"),
        }
    }

    #[test]
    fn excess_risk_examples() {
        let cov = CovarianceSpec::isotropic(4).unwrap();
        let ds = generate_dataset(
            &cov,
            &SignalSpec::pure_noise(),
            3,
            1.0,
            Ensemble::Gaussian,
            RngStream::new(1, 1),
        )
        .unwrap();
        assert_eq!(excess_risk(&[0.0; 4], &ds).unwrap(), 0.0);
        assert_eq!(excess_risk(&[1.0, 0.0, 0.0, 0.0], &ds).unwrap(), 1.0);
        assert!(excess_risk(&[1.0; 3], &ds).is_err());

        let spiked = build_covariance(CovarianceKind::SpikedIsotropic, 10, 5, 100.0, 1.0).unwrap();
        let ds = generate_dataset(
            &spiked,
            &SignalSpec::pure_noise(),
            3,
            1.0,
            Ensemble::Gaussian,
            RngStream::new(1, 1),
        )
        .unwrap();
        let mut e1 = vec![0.0; 10];
        e1[0] = 1.0;
        assert_eq!(excess_risk(&e1, &ds).unwrap(), 100.0);
    }

    #[test]
    fn response_is_signal_plus_noise() {
        let cov = CovarianceSpec::isotropic(20).unwrap();
        let ds = generate_dataset(
            &cov,
            &SignalSpec::sparse(5, 3.0),
            50,
            1.0,
            Ensemble::Gaussian,
            RngStream::new(3, 9),
        )
        .unwrap();
        let fitted = &ds.phi * &ds.beta_star + &ds.noise;
        assert!((fitted - &ds.y).amax() < 1e-12);
        assert_eq!(ds.beta_star.iter().filter(|&&b| b == 3.0).count(), 5);
    }

    #[test]
    fn normalize_records_factor() {
        let phi = DMatrix::from_column_slice(4, 2, &[1.0, -1.0, 1.0, -1.0, 2.0, 2.0, -2.0, 2.0]);
        let ds = Dataset::from_parts(phi.clone(), DVector::from_element(4, 1.0)).unwrap();
        let nd = column_normalize(&ds).unwrap();
        assert_eq!(nd.col_scale.as_deref(), Some(&[1.0, 2.0][..]));
        assert_eq!(nd.phi.column(0), phi.column(0));
        assert_eq!(nd.phi[(0, 1)], 1.0);
        let back = denormalize(&nd);
        assert!((back.phi - phi).amax() < 1e-12);

        let zero = Dataset::from_parts(DMatrix::zeros(3, 2), DVector::zeros(3)).unwrap();
        assert!(matches!(column_normalize(&zero), Err(DesignError::ZeroColumn(0))));
    }

    #[test]
    fn dump_round_trips_bit_exactly() {
        let cov = build_covariance(CovarianceKind::SpikedIsotropic, 12, 2, 100.0, 1.0).unwrap();
        let ds = generate_dataset(
            &cov,
            &SignalSpec::sparse(2, 3.0),
            7,
            0.7,
            Ensemble::StudentT4,
            RngStream::new(5, 6),
        )
        .unwrap();
        let ds = column_normalize(&ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }
}
