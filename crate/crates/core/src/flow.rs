//! The continuous ℓ2-boosting flow β̇ ∈ ∂‖g‖_∞, g = (1/n)Φᵀ(Y − Φβ), its
//! noise-level stopping rules and the refitted cross-validation variance
//! estimate.
//!
//! The flow is integrated exactly. Between events the path is linear: the
//! velocity is the minimum-norm element of conv{sign(g_j)e_j : |g_j| = ρ},
//! found by a small simplex-constrained quadratic program over the tied
//! coordinates, and an event occurs when another coordinate's correlation
//! reaches ρ. Time is ℓ1 arc length, and the path is sampled on the grid
//! t_k = k·ε.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{excess_risk_unchecked, Dataset};
use crate::interpolants::{column_mean_squares, lasso_coordinate_descent, SolverError};
use crate::linalg::GramCholesky;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("max correlation increased by {increase:e} at step {step}; retry with step size {suggested_eps:e}")]
    NonMonotone {
        increase: f64,
        step: usize,
        suggested_eps: f64,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("refit on the selected support is singular ({support} columns, {rows} rows)")]
    SingularRefit { support: usize, rows: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("trajectory file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Grid spacing ε; `None` picks 0.002·ρ(0)/max_j (1/n)‖Φ_j‖².
    pub step_eps: Option<f64>,
    /// Largest grid index evaluated.
    pub max_steps: usize,
    /// Keep every `record_stride`-th grid point (the crossing is always kept).
    pub record_stride: usize,
    /// Continue past the stopping threshold.
    pub run_past_stop: bool,
    /// Halt once ρ ≤ rho_floor·ρ(0) (never later than [`INTERPOLATION_FLOOR`]).
    pub rho_floor: f64,
    /// Recompute g from scratch every this many events.
    pub refresh_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            step_eps: None,
            max_steps: 1_000_000,
            record_stride: 1,
            run_past_stop: false,
            rho_floor: 0.0,
            refresh_every: 1000,
        }
    }
}

impl FlowConfig {
    fn validate(&self) -> Result<(), FlowError> {
        if let Some(e) = self.step_eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(FlowError::InvalidConfig(format!("step_eps must be positive, got {e}")));
            }
        }
        if self.record_stride == 0 {
            return Err(FlowError::InvalidConfig("record_stride must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.rho_floor) {
            return Err(FlowError::InvalidConfig(format!(
                "rho_floor must lie in [0, 1), got {}",
                self.rho_floor
            )));
        }
        if self.refresh_every == 0 {
            return Err(FlowError::InvalidConfig("refresh_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    Oracle,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub kind: ThresholdKind,
    pub sigma: f64,
    pub c: f64,
    /// σ√(2c ln p / n)
    pub lambda_n: f64,
    /// 2λ_n
    pub threshold: f64,
}

impl StoppingRule {
    pub fn new(kind: ThresholdKind, sigma: f64, p: usize, n: usize, c: f64) -> Result<Self, FlowError> {
        if !(c > 1.0) {
            return Err(FlowError::Domain(format!("stopping constant must exceed 1, got {c}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(FlowError::Domain(format!("noise level must be positive, got {sigma}")));
        }
        if p < 2 || n == 0 {
            return Err(FlowError::Domain(format!("need p >= 2 and n >= 1 (p = {p}, n = {n})")));
        }
        let lambda_n = sigma * (2.0 * c * (p as f64).ln() / n as f64).sqrt();
        Ok(Self {
            kind,
            sigma,
            c,
            lambda_n,
            threshold: 2.0 * lambda_n,
        })
    }
}

pub fn oracle_threshold(sigma: f64, p: usize, n: usize, c: f64) -> Result<StoppingRule, FlowError> {
    StoppingRule::new(ThresholdKind::Oracle, sigma, p, n, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Stopped at the threshold crossing.
    Threshold,
    /// Reached ρ = 0 (interpolation) or the configured floor.
    Converged,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingTrajectory {
    /// Grid indices k of the recorded rows.
    pub steps: Vec<usize>,
    /// t_k = k·ε
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    pub l1_norm: Vec<f64>,
    pub linf_norm: Vec<f64>,
    pub risk: Vec<f64>,
    /// Held-out mean squared error per row, when a validation set was supplied.
    pub heldout_mse: Option<Vec<f64>>,
    pub step_eps: f64,
    pub rho0: f64,
    pub threshold: Option<f64>,
    /// Grid index of the first point with ρ ≤ threshold.
    pub t_star_index: Option<usize>,
    /// Row of `t_star_index` in the recorded arrays.
    pub stop_row: Option<usize>,
    /// ρ one grid step before the crossing.
    pub rho_before_stop: Option<f64>,
    pub crossed: bool,
    /// ρ(0) was already at or below the threshold.
    pub crossed_at_start: bool,
    pub beta_at_stop: Option<Vec<f64>>,
    pub beta_final: Vec<f64>,
    pub reason: StopReason,
    /// Number of direction changes along the path.
    pub events: usize,
    /// Largest increase of ρ between consecutive evaluated points.
    pub max_rho_increase: f64,
}

impl BoostingTrajectory {
    pub fn risk_at_stop(&self) -> Option<f64> {
        self.stop_row.map(|r| self.risk[r])
    }

    pub fn min_risk(&self) -> f64 {
        self.risk.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Writes `step,t,rho,l1_norm,excess_risk,stopped_flag` rows.
    pub fn write_csv(&self, path: &Path) -> Result<(), FlowError> {
        let io = |source| FlowError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "step,t,rho,l1_norm,excess_risk,stopped_flag").map_err(io)?;
        for i in 0..self.steps.len() {
            let flag = u8::from(self.stop_row == Some(i));
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.steps[i], self.times[i], self.rho[i], self.l1_norm[i], self.risk[i], flag
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Validation rows whose prediction error is tracked along the path.
#[derive(Debug, Clone)]
pub struct Holdout {
    pub phi: DMatrix<f64>,
    pub y: DVector<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gradient(phi: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut r = y.to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (ri, x) in r.iter_mut().zip(&phi.as_slice()[j * n..(j + 1) * n]) {
                *ri -= b * x;
            }
        }
    }
    phi.as_slice().chunks(n).map(|c| dot(c, &r) / n as f64).collect()
}

/// g = (1/n)Φᵀ(Y − Φβ).
pub fn negative_gradient(dataset: &Dataset, beta: &[f64]) -> Result<Vec<f64>, FlowError> {
    if beta.len() != dataset.p() {
        return Err(FlowError::DimensionMismatch {
            expected: dataset.p(),
            got: beta.len(),
        });
    }
    Ok(gradient(&dataset.phi, dataset.y.as_slice(), beta))
}

/// Tied coordinates carrying weight in the current velocity, with the
/// Cholesky factor of their lifted Gram matrix.
struct Direction {
    support: Vec<usize>,
    signs: Vec<f64>,
    weights: Vec<f64>,
    chol: GramCholesky,
}

impl Direction {
    /// Minimizer over the affine hull of the current support:
    /// u ∝ S G⁻¹ s with G the lifted Gram, returned with the normalizer sᵀG⁻¹s.
    fn unconstrained(&self) -> (Vec<f64>, f64) {
        let z = self.chol.solve(&self.signs);
        let w: Vec<f64> = z.iter().zip(&self.signs).map(|(a, s)| a * s).collect();
        let total: f64 = w.iter().sum();
        (w.iter().map(|v| v / total).collect(), total)
    }

    fn remove(&mut self, pos: usize) -> usize {
        self.chol.remove(pos);
        self.signs.remove(pos);
        self.weights.remove(pos);
        self.support.remove(pos)
    }
}

struct FlowState<'a> {
    phi: &'a DMatrix<f64>,
    n: usize,
    col_sq: Vec<f64>,
    /// Constant added to every signed Gram entry. On the simplex it shifts
    /// the objective by a constant, and it keeps the factor nonsingular for
    /// points that are affinely but not linearly independent.
    lift: f64,
}

impl FlowState<'_> {
    fn col(&self, j: usize) -> &[f64] {
        &self.phi.as_slice()[j * self.n..(j + 1) * self.n]
    }

    fn gram(&self, i: usize, j: usize) -> f64 {
        dot(self.col(i), self.col(j)) / self.n as f64
    }

    fn push(&self, dir: &mut Direction, k: usize, sign: f64) -> bool {
        let cross: Vec<f64> = dir
            .support
            .iter()
            .zip(&dir.signs)
            .map(|(&i, &s)| self.gram(i, k) + self.lift * s * sign)
            .collect();
        if dir.chol.push(&cross, self.col_sq[k] + self.lift).is_err() {
            return false;
        }
        dir.support.push(k);
        dir.signs.push(sign);
        dir.weights.push(0.0);
        true
    }

    /// Velocity pieces for the current weights: v = Φd, a = Φᵀv/n, q = ‖v‖²/n.
    fn velocity(&self, dir: &Direction, a: &mut [f64]) -> (Vec<f64>, f64) {
        let mut v = vec![0.0; self.n];
        for ((&j, &s), &u) in dir.support.iter().zip(&dir.signs).zip(&dir.weights) {
            let w = s * u;
            for (vi, x) in v.iter_mut().zip(self.col(j)) {
                *vi += w * x;
            }
        }
        let nf = self.n as f64;
        for (j, aj) in a.iter_mut().enumerate() {
            *aj = dot(self.col(j), &v) / nf;
        }
        let q = dot(&v, &v) / nf;
        (v, q)
    }

    /// Re-optimizes the simplex weights after a coordinate has joined with
    /// weight 0, by primal active-set steps. Tied coordinates dropped here
    /// descend faster than ρ and leave the tie set.
    fn reoptimize(&self, dir: &mut Direction, a: &mut [f64]) -> (Vec<f64>, f64) {
        let mut dropped: Vec<(usize, f64)> = Vec::new();
        for _ in 0..4 * (dir.support.len() + 4) {
            let (target, _) = dir.unconstrained();
            if target.iter().all(|&u| u > 0.0) {
                dir.weights = target;
                let (v, q) = self.velocity(dir, a);
                // A dropped coordinate whose rate falls below q would rise
                // above ρ; bring back the worst one.
                let worst = dropped
                    .iter()
                    .map(|&(j, s)| (j, s, s * a[j]))
                    .filter(|&(_, _, rate)| rate < q * (1.0 - 1e-12))
                    .min_by(|x, y| x.2.partial_cmp(&y.2).unwrap());
                match worst {
                    Some((j, s, _)) => {
                        dropped.retain(|&(i, _)| i != j);
                        if !self.push(dir, j, s) {
                            return (v, q);
                        }
                        continue;
                    }
                    None => return (v, q),
                }
            }
            // Move from the current weights toward the target until the
            // first weight hits zero.
            let mut alpha = 1.0;
            let mut hit = 0;
            for (i, (&u, &t)) in dir.weights.iter().zip(&target).enumerate() {
                if t <= 0.0 {
                    let ai = if u > t { u / (u - t) } else { 0.0 };
                    if ai < alpha {
                        alpha = ai;
                        hit = i;
                    }
                }
            }
            for (u, t) in dir.weights.iter_mut().zip(&target) {
                *u += alpha * (t - *u);
            }
            let sign = dir.signs[hit];
            let j = dir.remove(hit);
            dropped.push((j, sign));
            let total: f64 = dir.weights.iter().sum();
            if total > 0.0 {
                dir.weights.iter_mut().for_each(|u| *u /= total);
            }
        }
        self.velocity(dir, a)
    }
}

/// Relative correlation level at which the flow counts as interpolating.
pub const INTERPOLATION_FLOOR: f64 = 1e-9;

/// Runs the flow without a validation set.
pub fn run_flow(
    dataset: &Dataset,
    config: &FlowConfig,
    rule: Option<&StoppingRule>,
) -> Result<BoostingTrajectory, FlowError> {
    run_flow_observed(dataset, config, rule, None)
}

/// Runs the flow, optionally tracking held-out MSE at every recorded row.
pub fn run_flow_observed(
    dataset: &Dataset,
    config: &FlowConfig,
    rule: Option<&StoppingRule>,
    holdout: Option<&Holdout>,
) -> Result<BoostingTrajectory, FlowError> {
    config.validate()?;
    let (n, p) = dataset.phi.shape();
    if let Some(h) = holdout {
        if h.phi.ncols() != p || h.phi.nrows() != h.y.len() {
            return Err(FlowError::DimensionMismatch {
                expected: p,
                got: h.phi.ncols(),
            });
        }
    }
    let col_sq = column_mean_squares(&dataset.phi);
    let lift = col_sq.iter().sum::<f64>() / p.max(1) as f64;
    let state = FlowState {
        phi: &dataset.phi,
        n,
        col_sq,
        lift,
    };
    let y = dataset.y.as_slice();
    let mut beta = vec![0.0; p];
    let mut c = gradient(&dataset.phi, y, &beta);
    let rho_of = |c: &[f64]| c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let rho0 = rho_of(&c);
    let max_col = state.col_sq.iter().cloned().fold(0.0, f64::max);
    let eps = match config.step_eps {
        Some(e) => e,
        None if rho0 > 0.0 && max_col > 0.0 => 0.002 * rho0 / max_col,
        None => 1.0,
    };
    let threshold = rule.map(|r| r.threshold);
    // Below this level the incrementally updated correlations are rounding
    // noise, so the flow is treated as having interpolated.
    let floor = config.rho_floor.max(INTERPOLATION_FLOOR) * rho0;

    let mut rec = Recorder::new(dataset, holdout, config.record_stride, eps, threshold);
    rec.evaluate(0, &beta, rho0, true);
    let mut rho = rho0;

    let finish =
        |rec: Recorder, beta: Vec<f64>, reason: StopReason, events: usize| -> Result<BoostingTrajectory, FlowError> {
            rec.into_trajectory(beta, reason, events, rho0)
        };

    if rec.crossed && !config.run_past_stop {
        return finish(rec, beta, StopReason::Threshold, 0);
    }
    if rho0 == 0.0 || rho0 <= floor {
        return finish(rec, beta, StopReason::Converged, 0);
    }

    let first = (0..p).fold(0, |best, j| if c[j].abs() > c[best].abs() { j } else { best });
    let mut dir = Direction {
        support: Vec::new(),
        signs: Vec::new(),
        weights: Vec::new(),
        chol: GramCholesky::new(),
    };
    if !state.push(&mut dir, first, c[first].signum()) {
        return Err(FlowError::Domain("leading column is zero".into()));
    }
    dir.weights[0] = 1.0;
    let mut a = vec![0.0; p];
    let (mut v, mut q) = state.velocity(&dir, &mut a);
    let mut blocked = vec![false; p];
    let mut t = 0.0;
    let mut next_k = 1usize;
    let mut events = 0usize;
    let mut val_pred = holdout.map(|h| vec![0.0; h.y.len()]);

    loop {
        let mut in_support = vec![false; p];
        for &j in &dir.support {
            in_support[j] = true;
        }
        let end_h = if q > 0.0 {
            (rho - floor).max(0.0) / q
        } else {
            f64::INFINITY
        };
        let mut h = end_h;
        let mut joiner: Option<(usize, f64)> = None;
        // A coordinate already within rounding of ρ and gaining on it joins
        // at once; the rate tolerance matches the one in `reoptimize`, so a
        // coordinate it just dropped is not picked again.
        let gap_tol = 1e-13 * rho0;
        for k in 0..p {
            if in_support[k] || blocked[k] {
                continue;
            }
            for (num, den, sign) in [(rho - c[k], q - a[k], 1.0), (rho + c[k], q + a[k], -1.0)] {
                if den > 1e-12 * q {
                    let hk = if num <= gap_tol { 0.0 } else { num / den };
                    if hk < h {
                        h = hk;
                        joiner = Some((k, sign));
                    }
                }
            }
        }
        if !h.is_finite() {
            // Zero velocity: nothing can move.
            return finish(rec, beta, StopReason::Converged, events);
        }

        // Validation-set velocity for this segment.
        let val_vel = holdout.map(|hd| {
            let m = hd.y.len();
            let mut out = vec![0.0; m];
            for ((&j, &s), &u) in dir.support.iter().zip(&dir.signs).zip(&dir.weights) {
                let w = s * u;
                let col = &hd.phi.as_slice()[j * m..(j + 1) * m];
                for (o, x) in out.iter_mut().zip(col) {
                    *o += w * x;
                }
            }
            out
        });

        // Sample the grid inside (t, t + h].
        while (next_k as f64) * eps <= t + h && next_k <= config.max_steps {
            let tau = next_k as f64 * eps - t;
            let mut b = beta.clone();
            for ((&j, &s), &u) in dir.support.iter().zip(&dir.signs).zip(&dir.weights) {
                b[j] += tau * s * u;
            }
            let rho_k = c
                .iter()
                .zip(&a)
                .fold(0.0_f64, |m, (ci, ai)| m.max((ci - tau * ai).abs()));
            if let (Some(pred), Some(vel)) = (&val_pred, &val_vel) {
                rec.set_val(pred.iter().zip(vel).map(|(p0, v0)| p0 + tau * v0));
            }
            rec.evaluate(next_k, &b, rho_k, false);
            next_k += 1;
            if rec.crossed && rec.stop_now(config.run_past_stop) {
                return finish(rec, b, StopReason::Threshold, events);
            }
        }
        if next_k > config.max_steps {
            let b = rec.last_beta.clone().unwrap_or_else(|| beta.clone());
            return finish(rec, b, StopReason::MaxSteps, events);
        }

        // Advance to the event.
        for ((&j, &s), &u) in dir.support.iter().zip(&dir.signs).zip(&dir.weights) {
            beta[j] += h * s * u;
        }
        for (ci, ai) in c.iter_mut().zip(&a) {
            *ci -= h * ai;
        }
        if let (Some(pred), Some(vel)) = (val_pred.as_mut(), &val_vel) {
            for (p0, v0) in pred.iter_mut().zip(vel) {
                *p0 += h * v0;
            }
        }
        t += h;
        events += 1;
        let _ = &v;
        if events % config.refresh_every == 0 {
            c = gradient(&dataset.phi, y, &beta);
        }
        let new_rho = rho_of(&c);
        rec.note_rho(new_rho);
        rho = new_rho;

        match joiner {
            None => {
                // Reached interpolation or the floor; the flow is stationary
                // from here, so the next grid point carries the final state.
                if next_k <= config.max_steps {
                    if let (Some(pred), Some(_)) = (&val_pred, &val_vel) {
                        rec.set_val(pred.iter().cloned());
                    }
                    rec.evaluate(next_k, &beta, rho, true);
                }
                let reason = if rec.crossed && !config.run_past_stop {
                    StopReason::Threshold
                } else {
                    StopReason::Converged
                };
                return finish(rec, beta, reason, events);
            }
            Some((k, sign)) => {
                if state.push(&mut dir, k, sign) {
                    let (nv, nq) = state.reoptimize(&mut dir, &mut a);
                    v = nv;
                    q = nq;
                } else {
                    blocked[k] = true;
                }
            }
        }
        if rec.max_increase > 1e-6 {
            return Err(FlowError::NonMonotone {
                increase: rec.max_increase,
                step: next_k,
                suggested_eps: eps / 10.0,
            });
        }
    }
}

/// Collects grid samples and stopping information.
struct Recorder<'a> {
    dataset: &'a Dataset,
    holdout: Option<&'a Holdout>,
    stride: usize,
    eps: f64,
    threshold: Option<f64>,
    steps: Vec<usize>,
    times: Vec<f64>,
    rho: Vec<f64>,
    l1: Vec<f64>,
    linf: Vec<f64>,
    risk: Vec<f64>,
    heldout: Vec<f64>,
    pending_val: Option<Vec<f64>>,
    crossed: bool,
    crossed_at_start: bool,
    t_star: Option<usize>,
    stop_row: Option<usize>,
    rho_before: Option<f64>,
    beta_at_stop: Option<Vec<f64>>,
    last_rho: f64,
    last_beta: Option<Vec<f64>>,
    max_increase: f64,
}

impl<'a> Recorder<'a> {
    fn new(
        dataset: &'a Dataset,
        holdout: Option<&'a Holdout>,
        stride: usize,
        eps: f64,
        threshold: Option<f64>,
    ) -> Self {
        Self {
            dataset,
            holdout,
            stride,
            eps,
            threshold,
            steps: Vec::new(),
            times: Vec::new(),
            rho: Vec::new(),
            l1: Vec::new(),
            linf: Vec::new(),
            risk: Vec::new(),
            heldout: Vec::new(),
            pending_val: holdout.map(|h| vec![0.0; h.y.len()]),
            crossed: false,
            crossed_at_start: false,
            t_star: None,
            stop_row: None,
            rho_before: None,
            beta_at_stop: None,
            last_rho: f64::NAN,
            last_beta: None,
            max_increase: 0.0,
        }
    }

    fn set_val<I: Iterator<Item = f64>>(&mut self, pred: I) {
        self.pending_val = Some(pred.collect());
    }

    fn note_rho(&mut self, rho: f64) {
        if self.last_rho.is_finite() {
            self.max_increase = self.max_increase.max(rho - self.last_rho);
        }
        self.last_rho = rho;
    }

    fn stop_now(&self, run_past_stop: bool) -> bool {
        !run_past_stop
    }

    fn evaluate(&mut self, k: usize, beta: &[f64], rho: f64, force: bool) {
        let prev = self.last_rho;
        self.note_rho(rho);
        let mut keep = force || k % self.stride == 0;
        if let Some(thr) = self.threshold {
            if !self.crossed && rho <= thr {
                self.crossed = true;
                self.crossed_at_start = k == 0;
                self.t_star = Some(k);
                self.rho_before = if k == 0 { None } else { Some(prev) };
                self.beta_at_stop = Some(beta.to_vec());
                keep = true;
            }
        }
        self.last_beta = Some(beta.to_vec());
        if !keep {
            return;
        }
        if self.t_star == Some(k) {
            self.stop_row = Some(self.steps.len());
        }
        self.steps.push(k);
        self.times.push(k as f64 * self.eps);
        self.rho.push(rho);
        self.l1.push(beta.iter().map(|b| b.abs()).sum());
        self.linf.push(beta.iter().fold(0.0, |m: f64, b| m.max(b.abs())));
        self.risk.push(excess_risk_unchecked(beta, self.dataset));
        if let (Some(h), Some(pred)) = (self.holdout, &self.pending_val) {
            let m = h.y.len() as f64;
            let mse = pred.iter().zip(h.y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m;
            self.heldout.push(mse);
        }
    }

    fn into_trajectory(
        self,
        beta_final: Vec<f64>,
        reason: StopReason,
        events: usize,
        rho0: f64,
    ) -> Result<BoostingTrajectory, FlowError> {
        Ok(BoostingTrajectory {
            steps: self.steps,
            times: self.times,
            rho: self.rho,
            l1_norm: self.l1,
            linf_norm: self.linf,
            risk: self.risk,
            heldout_mse: self.holdout.map(|_| self.heldout),
            step_eps: self.eps,
            rho0,
            threshold: self.threshold,
            t_star_index: self.t_star,
            stop_row: self.stop_row,
            rho_before_stop: self.rho_before,
            crossed: self.crossed,
            crossed_at_start: self.crossed_at_start,
            beta_at_stop: self.beta_at_stop,
            beta_final,
            reason,
            events,
            max_rho_increase: self.max_increase,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcvDiagnostics {
    /// Estimates from (select on first half, refit on second) and the swap.
    pub sigma2_halves: [f64; 2],
    pub support_sizes: [usize; 2],
    /// The selected support exceeded |I|/4 and was truncated.
    pub cap_hit: [bool; 2],
    pub selection_lambda: [f64; 2],
}

/// Refitted cross-validation estimate of σ².
pub fn rcv_variance_estimate(dataset: &Dataset) -> Result<(f64, RcvDiagnostics), FlowError> {
    let n = dataset.n();
    if n < 40 {
        return Err(FlowError::Domain(format!("variance estimation needs n >= 40, got {n}")));
    }
    let first: Vec<usize> = (0..n / 2).collect();
    let second: Vec<usize> = (n / 2..n).collect();
    let a = dataset.subset_rows(&first);
    let b = dataset.subset_rows(&second);
    let (s1, k1, cap1, l1) = rcv_half(&a, &b)?;
    let (s2, k2, cap2, l2) = rcv_half(&b, &a)?;
    Ok((
        0.5 * (s1 + s2),
        RcvDiagnostics {
            sigma2_halves: [s1, s2],
            support_sizes: [k1, k2],
            cap_hit: [cap1, cap2],
            selection_lambda: [l1, l2],
        },
    ))
}

fn rcv_half(select: &Dataset, refit: &Dataset) -> Result<(f64, usize, bool, f64), FlowError> {
    let m = select.n();
    let p = select.p();
    let ys = select.y.as_slice();
    let mean = ys.iter().sum::<f64>() / m as f64;
    let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    let lambda = var.sqrt() * (2.2 * (p as f64).ln() / m as f64).sqrt();
    let beta = match lasso_coordinate_descent(select, lambda, 1e-6, 1000) {
        Ok(fit) => fit.beta,
        Err(SolverError::LassoNotConverged { fit }) => fit.beta,
        Err(e) => return Err(e.into()),
    };
    let mut support: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
    let cap = m / 4;
    let cap_hit = support.len() > cap;
    if cap_hit {
        support.sort_by(|&i, &j| beta[j].abs().partial_cmp(&beta[i].abs()).unwrap().then(i.cmp(&j)));
        support.truncate(cap);
        support.sort_unstable();
    }
    let rows = refit.n();
    let rss = if support.is_empty() {
        refit.y.iter().map(|v| v * v).sum::<f64>()
    } else {
        let sub = refit.phi.select_columns(support.iter());
        let qr = sub.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().amax();
        if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * diag_max.max(1e-300)) {
            return Err(FlowError::SingularRefit {
                support: support.len(),
                rows,
            });
        }
        let qty = qr.q().transpose() * &refit.y;
        let coef = r.solve_upper_triangular(&qty).ok_or(FlowError::SingularRefit {
            support: support.len(),
            rows,
        })?;
        let resid = &refit.y - sub * coef;
        resid.norm_squared()
    };
    let dof = rows - support.len();
    Ok((rss / dof as f64, support.len(), cap_hit, lambda))
}

/// Stopping rule with σ replaced by the refitted cross-validation estimate.
pub fn adaptive_threshold(dataset: &Dataset, c: f64) -> Result<StoppingRule, FlowError> {
    let (s2, _) = rcv_variance_estimate(dataset)?;
    if !(s2 > 0.0) {
        return Err(FlowError::Domain(format!(
            "estimated noise variance is not positive ({s2:e})"
        )));
    }
    StoppingRule::new(ThresholdKind::Adaptive, s2.sqrt(), dataset.p(), dataset.n(), c)
}
