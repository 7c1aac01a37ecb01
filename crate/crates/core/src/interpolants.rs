//! Static estimators: basis pursuit by lasso homotopy, the minimum-ℓ2
//! interpolant, a brute-force basis pursuit oracle for tiny problems, and
//! the lasso by coordinate descent with K-fold cross-validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::Dataset;
use crate::linalg::GramCholesky;
use crate::numerics::soft_threshold_unchecked;

/// Default feasibility tolerance relative to ‖Y‖_∞.
pub const DEFAULT_FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolantSolution {
    pub beta: Vec<f64>,
    /// ‖β‖₁ for basis pursuit, ‖β‖₂ for the minimum-ℓ2 interpolant.
    pub objective: f64,
    pub residual_inf: f64,
    pub active_set: Vec<usize>,
    /// n-vector u with (Φᵀu)_j = sign(β_j) on the support and |Φᵀu| ≤ 1 elsewhere.
    pub dual_certificate: Option<Vec<f64>>,
    pub solver_steps: usize,
}

impl InterpolantSolution {
    pub fn l1_norm(&self) -> f64 {
        self.beta.iter().map(|b| b.abs()).sum()
    }

    pub fn linf_norm(&self) -> f64 {
        self.beta.iter().fold(0.0, |m, b| m.max(b.abs()))
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum()
    }
}

/// Outcome of checking a dual certificate against a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    /// max_j∉A |(Φᵀu)_j|
    pub off_support_max: f64,
    /// max_j∈A |(Φᵀu)_j − s_j|
    pub on_support_err: f64,
    /// Every support coordinate has sign(β_j) = (Φᵀu)_j's sign.
    pub signs_agree: bool,
}

impl CertificateCheck {
    pub fn is_valid(&self, slack: f64) -> bool {
        self.signs_agree && self.off_support_max <= 1.0 + slack && self.on_support_err <= slack
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("Gram matrix is singular (condition estimate {condition_estimate:e})")]
    SingularGram { condition_estimate: f64 },
    #[error("homotopy stopped after {steps} steps without reaching interpolation (residual {residual_inf:e})")]
    MaxIterations {
        steps: usize,
        residual_inf: f64,
        best: Box<InterpolantSolution>,
    },
    #[error(
        "no valid dual certificate (max off-support correlation {off_support_max}); the design is likely degenerate"
    )]
    Degenerate {
        off_support_max: f64,
        best: Box<InterpolantSolution>,
    },
    #[error("solution violates feasibility: residual {residual_inf:e} > tolerance {tol:e}")]
    Infeasible { residual_inf: f64, tol: f64 },
    #[error("problem too large for enumeration (n = {n}, p = {p}; limits n <= 6, p <= 12)")]
    TooLarge { n: usize, p: usize },
    #[error("lasso did not converge after {} sweeps (duality gap {:e})", .fit.sweeps, .fit.duality_gap)]
    LassoNotConverged { fit: Box<LassoFit> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn residual_inf(phi: &DMatrix<f64>, y: &DVector<f64>, beta: &[f64]) -> f64 {
    let n = phi.nrows();
    let mut r = y.as_slice().to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            let col = &phi.as_slice()[j * n..(j + 1) * n];
            for (ri, x) in r.iter_mut().zip(col) {
                *ri -= b * x;
            }
        }
    }
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// β = Φᵀ(ΦΦᵀ)⁻¹Y.
pub fn min_l2_interpolant(dataset: &Dataset) -> Result<InterpolantSolution, SolverError> {
    let phi = &dataset.phi;
    let (n, p) = phi.shape();
    if p < n {
        return Err(SolverError::InvalidArgument(format!(
            "minimum-norm interpolation needs p >= n (n = {n}, p = {p})"
        )));
    }
    let mut gram = DMatrix::zeros(n, n);
    gram.gemm(1.0, phi, &phi.transpose(), 0.0);
    let chol = match gram.clone().cholesky() {
        Some(c) => c,
        None => {
            let ev = gram.symmetric_eigenvalues();
            let max = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let min = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            return Err(SolverError::SingularGram {
                condition_estimate: if min > 0.0 { max / min } else { f64::INFINITY },
            });
        }
    };
    let z = chol.solve(&dataset.y);
    let beta: Vec<f64> = (0..p).map(|j| dot(dataset.column(j), z.as_slice())).collect();
    let res = residual_inf(phi, &dataset.y, &beta);
    let tol = DEFAULT_FEAS_TOL * dataset.y.amax();
    if res > tol && res > 1e-300 {
        return Err(SolverError::Infeasible { residual_inf: res, tol });
    }
    let objective = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    let active_set = (0..p).filter(|&j| beta[j] != 0.0).collect();
    Ok(InterpolantSolution {
        beta,
        objective,
        residual_inf: res,
        active_set,
        dual_certificate: None,
        solver_steps: 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    /// Feasibility tolerance relative to ‖Y‖_∞.
    pub feas_tol: f64,
    /// Homotopy event budget; `None` uses 50·n + p.
    pub max_steps: Option<usize>,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            feas_tol: DEFAULT_FEAS_TOL,
            max_steps: None,
        }
    }
}

enum Event {
    End,
    Enter(usize),
    Drop(usize),
}

/// Allowed excess of off-support dual correlations over 1.
pub const CERTIFICATE_SLACK: f64 = 1e-6;

/// Minimum-ℓ1 interpolant min ‖β‖₁ s.t. Φβ = Y, by following the lasso path
/// from λ_max down to zero.
pub fn basis_pursuit(dataset: &Dataset, feas_tol: f64) -> Result<InterpolantSolution, SolverError> {
    basis_pursuit_with(
        dataset,
        &BpOptions {
            feas_tol,
            ..BpOptions::default()
        },
    )
}

pub fn basis_pursuit_with(dataset: &Dataset, opts: &BpOptions) -> Result<InterpolantSolution, SolverError> {
    let phi = &dataset.phi;
    let y = &dataset.y;
    let (n, p) = phi.shape();
    let nf = n as f64;
    let y_inf = y.amax();
    if y_inf == 0.0 {
        return Ok(InterpolantSolution {
            beta: vec![0.0; p],
            objective: 0.0,
            residual_inf: 0.0,
            active_set: Vec::new(),
            dual_certificate: Some(vec![0.0; n]),
            solver_steps: 0,
        });
    }
    let max_steps = opts.max_steps.unwrap_or(50 * n + p);
    let col = |j: usize| &phi.as_slice()[j * n..(j + 1) * n];

    let mut c: Vec<f64> = (0..p).map(|j| dot(col(j), y.as_slice()) / nf).collect();
    let mut beta = vec![0.0; p];
    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut in_active = vec![false; p];
    // Columns that proved numerically dependent on the active set.
    let mut blocked = vec![false; p];
    let mut chol = GramCholesky::new();

    let (first, lambda0) = c.iter().enumerate().fold(
        (0, -1.0),
        |(bi, bv), (j, v)| if v.abs() > bv { (j, v.abs()) } else { (bi, bv) },
    );
    let mut lambda = lambda0;
    let tiny = 1e-14 * lambda0;

    let add = |k: usize,
               active: &mut Vec<usize>,
               signs: &mut Vec<f64>,
               in_active: &mut Vec<bool>,
               chol: &mut GramCholesky,
               ck: f64|
     -> bool {
        let ck_col = col(k);
        let cross: Vec<f64> = active.iter().map(|&i| dot(col(i), ck_col) / nf).collect();
        let diag = dot(ck_col, ck_col) / nf;
        if chol.push(&cross, diag).is_err() {
            return false;
        }
        active.push(k);
        signs.push(if ck >= 0.0 { 1.0 } else { -1.0 });
        in_active[k] = true;
        true
    };

    if !add(first, &mut active, &mut signs, &mut in_active, &mut chol, c[first]) {
        return Err(SolverError::InvalidArgument("leading column is zero".into()));
    }

    let mut v = vec![0.0; n];
    let mut a = vec![0.0; p];
    // A dropped coordinate sits on one boundary; only the opposite one is a
    // genuine re-entry candidate on the next step.
    let mut last_dropped: Option<(usize, f64)> = None;
    let mut steps = 0usize;
    let mut reached_end = false;

    while steps < max_steps {
        steps += 1;
        let d = chol.solve(&signs);
        v.iter_mut().for_each(|x| *x = 0.0);
        for (&j, &dj) in active.iter().zip(&d) {
            for (vi, x) in v.iter_mut().zip(col(j)) {
                *vi += dj * x;
            }
        }
        for (j, aj) in a.iter_mut().enumerate() {
            *aj = dot(col(j), &v) / nf;
        }

        let mut h = lambda;
        let mut event = Event::End;
        if active.len() < n {
            for k in 0..p {
                if in_active[k] || blocked[k] {
                    continue;
                }
                for (num, den, side) in [(lambda - c[k], 1.0 - a[k], 1.0), (lambda + c[k], 1.0 + a[k], -1.0)] {
                    if last_dropped == Some((k, side)) {
                        continue;
                    }
                    if den > 1e-12 {
                        let hk = num / den;
                        if hk > tiny && hk < h {
                            h = hk;
                            event = Event::Enter(k);
                        }
                    }
                }
            }
        }
        for (pos, (&j, &dj)) in active.iter().zip(&d).enumerate() {
            if dj != 0.0 && beta[j] != 0.0 {
                let hj = -beta[j] / dj;
                if hj > tiny && hj < h {
                    h = hj;
                    event = Event::Drop(pos);
                }
            }
        }

        for (&j, &dj) in active.iter().zip(&d) {
            beta[j] += h * dj;
        }
        for (cj, aj) in c.iter_mut().zip(&a) {
            *cj -= h * aj;
        }
        lambda -= h;
        last_dropped = None;

        match event {
            Event::End => {
                reached_end = true;
                break;
            }
            Event::Drop(pos) => {
                let j = active.remove(pos);
                let s = signs.remove(pos);
                chol.remove(pos);
                in_active[j] = false;
                beta[j] = 0.0;
                last_dropped = Some((j, s));
            }
            Event::Enter(k) => {
                if !add(k, &mut active, &mut signs, &mut in_active, &mut chol, c[k]) {
                    blocked[k] = true;
                }
            }
        }

        if steps % 50 == 0 {
            // Bound drift in the incrementally updated correlations.
            let mut r = y.as_slice().to_vec();
            for &j in &active {
                let b = beta[j];
                for (ri, x) in r.iter_mut().zip(col(j)) {
                    *ri -= b * x;
                }
            }
            for (j, cj) in c.iter_mut().enumerate() {
                *cj = dot(col(j), &r) / nf;
            }
        }
    }

    let polished = polish_on_support(phi, y, &active, &signs);
    let (beta, cert) = match polished {
        Some((b_active, u)) => {
            let mut full = vec![0.0; p];
            for (&j, b) in active.iter().zip(b_active) {
                full[j] = b;
            }
            (full, Some(u))
        }
        None => (beta, None),
    };
    let res = residual_inf(phi, y, &beta);
    let objective = beta.iter().map(|b| b.abs()).sum();
    let mut support = active.clone();
    support.sort_unstable();
    let sol = InterpolantSolution {
        beta,
        objective,
        residual_inf: res,
        active_set: support,
        dual_certificate: cert,
        solver_steps: steps,
    };
    if !reached_end {
        return Err(SolverError::MaxIterations {
            steps,
            residual_inf: res,
            best: Box::new(sol),
        });
    }
    let tol = opts.feas_tol * y_inf;
    if res > tol {
        return Err(SolverError::Infeasible { residual_inf: res, tol });
    }
    // A column that was blocked as dependent on a non-full active set can
    // leave the path with correlations above λ; the certificate catches it.
    if let Some(check) = check_certificate(dataset, &sol) {
        if !check.is_valid(CERTIFICATE_SLACK) {
            return Err(SolverError::Degenerate {
                off_support_max: check.off_support_max,
                best: Box::new(sol),
            });
        }
    }
    Ok(sol)
}

/// Solves Φ_A β_A = Y in the least-squares sense and returns it together
/// with u = Φ_A(Φ_AᵀΦ_A)⁻¹s_A, both through one QR factorization.
fn polish_on_support(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    active: &[usize],
    signs: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    if active.is_empty() || active.len() > phi.nrows() {
        return None;
    }
    let sub = phi.select_columns(active.iter());
    let qr = sub.qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * y;
    let beta = r.solve_upper_triangular(&qty)?;
    let s = DVector::from_column_slice(signs);
    let w = r.transpose().solve_lower_triangular(&s)?;
    let u = q * w;
    if beta.iter().chain(u.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some((beta.as_slice().to_vec(), u.as_slice().to_vec()))
}

/// Verifies a basis pursuit dual certificate.
pub fn check_certificate(dataset: &Dataset, sol: &InterpolantSolution) -> Option<CertificateCheck> {
    let u = sol.dual_certificate.as_ref()?;
    let p = dataset.p();
    let mut off_support_max: f64 = 0.0;
    let mut on_support_err: f64 = 0.0;
    let mut signs_agree = true;
    let mut on_support = vec![false; p];
    for &j in &sol.active_set {
        on_support[j] = true;
    }
    for j in 0..p {
        let z = dot(dataset.column(j), u);
        if on_support[j] {
            let b = sol.beta[j];
            if b != 0.0 {
                on_support_err = on_support_err.max((z - b.signum()).abs());
                if z * b <= 0.0 {
                    signs_agree = false;
                }
            } else {
                off_support_max = off_support_max.max(z.abs());
            }
        } else {
            off_support_max = off_support_max.max(z.abs());
        }
    }
    Some(CertificateCheck {
        off_support_max,
        on_support_err,
        signs_agree,
    })
}

/// Enumerates every support of size at most n and keeps the feasible
/// interpolant of smallest ℓ1 norm. Limited to n ≤ 6, p ≤ 12.
pub fn brute_force_bp_oracle(dataset: &Dataset) -> Result<InterpolantSolution, SolverError> {
    let phi = &dataset.phi;
    let y = &dataset.y;
    let (n, p) = phi.shape();
    if n > 6 || p > 12 {
        return Err(SolverError::TooLarge { n, p });
    }
    let scale = y.amax().max(1.0);
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    let mut examined = 0usize;
    for size in 0..=n.min(p) {
        for support in Combinations::new(p, size) {
            examined += 1;
            let coef: DVector<f64> = if size == 0 {
                DVector::zeros(0)
            } else {
                let sub = phi.select_columns(support.iter());
                let svd = sub.svd(true, true);
                let smax = svd.singular_values.max();
                if svd.singular_values.iter().any(|&s| s <= 1e-10 * smax.max(1e-300)) {
                    continue;
                }
                match svd.solve(y, 0.0) {
                    Ok(b) => b,
                    Err(_) => continue,
                }
            };
            let mut beta = vec![0.0; p];
            for (&j, &b) in support.iter().zip(coef.iter()) {
                beta[j] = b;
            }
            if residual_inf(phi, y, &beta) > 1e-9 * scale {
                continue;
            }
            let obj: f64 = beta.iter().map(|b| b.abs()).sum();
            let better = match &best {
                None => true,
                Some((b, _, _)) => obj < *b,
            };
            if better {
                best = Some((obj, beta, support));
            }
        }
    }
    let (objective, beta, active_set) = best.ok_or(SolverError::Infeasible {
        residual_inf: f64::INFINITY,
        tol: 1e-9 * scale,
    })?;
    let res = residual_inf(phi, y, &beta);
    Ok(InterpolantSolution {
        beta,
        objective,
        residual_inf: res,
        active_set,
        dual_certificate: None,
        solver_steps: examined,
    })
}

/// Lexicographic k-subsets of 0..p.
struct Combinations {
    p: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(p: usize, k: usize) -> Self {
        Self {
            p,
            idx: (0..k).collect(),
            done: k > p,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.p - k + i {
                self.idx[i] += 1;
                for l in i + 1..k {
                    self.idx[l] = self.idx[l - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub duality_gap: f64,
    /// Absolute gap target: tol·‖Y‖²/n.
    pub gap_target: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Coordinate descent for (1/2n)‖Y−Φβ‖² + λ‖β‖₁.
///
/// `tol` is relative: convergence means duality gap ≤ tol·‖Y‖²/n.
pub fn lasso_coordinate_descent(
    dataset: &Dataset,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<LassoFit, SolverError> {
    if !(lambda >= 0.0) {
        return Err(SolverError::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let col_sq = column_mean_squares(&dataset.phi);
    let fit = cd_solve(
        &dataset.phi,
        dataset.y.as_slice(),
        &col_sq,
        lambda,
        vec![0.0; dataset.p()],
        tol,
        max_sweeps,
    );
    if fit.converged {
        Ok(fit)
    } else {
        Err(SolverError::LassoNotConverged { fit: Box::new(fit) })
    }
}

pub(crate) fn column_mean_squares(phi: &DMatrix<f64>) -> Vec<f64> {
    let n = phi.nrows();
    phi.as_slice()
        .chunks(n.max(1))
        .take(phi.ncols())
        .map(|c| dot(c, c) / n as f64)
        .collect()
}

fn duality_gap(phi: &DMatrix<f64>, y: &[f64], r: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = y.len();
    let nf = n as f64;
    let dual_norm = phi.as_slice().chunks(n).map(|c| dot(c, r).abs()).fold(0.0, f64::max) / nf;
    // At λ = 0 the unscaled residual is the natural dual point.
    let scale = if lambda > 0.0 && dual_norm > lambda {
        lambda / dual_norm
    } else {
        1.0
    };
    let rr = dot(r, r);
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let gap = 0.5 * rr / nf * (1.0 + scale * scale) + lambda * l1 - scale * dot(r, y) / nf;
    gap.abs()
}

/// Warm-started coordinate descent with active-set inner passes.
fn cd_solve(
    phi: &DMatrix<f64>,
    y: &[f64],
    col_sq: &[f64],
    lambda: f64,
    mut beta: Vec<f64>,
    tol: f64,
    max_sweeps: usize,
) -> LassoFit {
    let n = y.len();
    let nf = n as f64;
    let p = beta.len();
    let cols = phi.as_slice();
    let mut r = y.to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (ri, x) in r.iter_mut().zip(&cols[j * n..(j + 1) * n]) {
                *ri -= b * x;
            }
        }
    }
    let gap_target = tol * dot(y, y) / nf;

    let update = |j: usize, beta: &mut [f64], r: &mut [f64]| -> f64 {
        let g = col_sq[j];
        if g == 0.0 {
            return 0.0;
        }
        let col = &cols[j * n..(j + 1) * n];
        let old = beta[j];
        let z = old + dot(col, r) / nf / g;
        let new = soft_threshold_unchecked(z, lambda / g);
        let delta = new - old;
        if delta != 0.0 {
            for (ri, x) in r.iter_mut().zip(col) {
                *ri -= delta * x;
            }
            beta[j] = new;
        }
        delta.abs() * g.sqrt()
    };

    let mut sweeps = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;
    while sweeps < max_sweeps {
        let mut max_step: f64 = 0.0;
        for j in 0..p {
            max_step = max_step.max(update(j, &mut beta, &mut r));
        }
        sweeps += 1;
        // Inner passes restricted to the current support.
        let support: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        if max_step > 0.0 {
            for _ in 0..1000 {
                let mut inner: f64 = 0.0;
                let mut scale: f64 = 0.0;
                for &j in &support {
                    inner = inner.max(update(j, &mut beta, &mut r));
                    scale = scale.max(beta[j].abs() * col_sq[j].sqrt());
                }
                if inner <= 1e-6 * scale.max(1e-300) {
                    break;
                }
            }
        }
        gap = duality_gap(phi, y, &r, &beta, lambda);
        if gap <= gap_target {
            converged = true;
            break;
        }
    }
    LassoFit {
        beta,
        lambda,
        duality_gap: gap,
        gap_target,
        sweeps,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoCvResult {
    pub lambda_opt: f64,
    pub beta_opt: Vec<f64>,
    /// Descending λ grid.
    pub lambdas: Vec<f64>,
    /// Mean validation MSE per grid point.
    pub cv_mse: Vec<f64>,
    /// Fits that hit the sweep budget; their last iterate was used.
    pub nonconverged_fits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoCvOptions {
    pub n_folds: usize,
    pub grid_size: usize,
    /// Smallest λ as a fraction of λ_max.
    pub grid_ratio: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoCvOptions {
    fn default() -> Self {
        Self {
            n_folds: 5,
            grid_size: 50,
            grid_ratio: 1e-3,
            tol: 1e-4,
            max_sweeps: 1000,
        }
    }
}

/// K-fold cross-validated lasso over a log-spaced λ grid with contiguous folds.
pub fn lasso_cv(dataset: &Dataset, opts: &LassoCvOptions) -> Result<LassoCvResult, SolverError> {
    let (n, p) = dataset.phi.shape();
    if opts.n_folds < 2 || n < opts.n_folds {
        return Err(SolverError::InvalidArgument(format!(
            "need n >= n_folds >= 2 (n = {n}, folds = {})",
            opts.n_folds
        )));
    }
    if opts.grid_size < 2 {
        return Err(SolverError::InvalidArgument("grid needs at least two points".into()));
    }
    let nf = n as f64;
    let lambda_max = (0..p)
        .map(|j| dot(dataset.column(j), dataset.y.as_slice()).abs())
        .fold(0.0, f64::max)
        / nf;
    let lambdas: Vec<f64> = if lambda_max > 0.0 {
        let lo = (lambda_max * opts.grid_ratio).ln();
        let hi = lambda_max.ln();
        (0..opts.grid_size)
            .map(|i| (hi + (lo - hi) * i as f64 / (opts.grid_size - 1) as f64).exp())
            .collect()
    } else {
        vec![0.0; opts.grid_size]
    };

    let mut nonconverged = 0usize;
    let mut sse = vec![0.0; lambdas.len()];
    for f in 0..opts.n_folds {
        let lo = f * n / opts.n_folds;
        let hi = (f + 1) * n / opts.n_folds;
        let train: Vec<usize> = (0..lo).chain(hi..n).collect();
        let val: Vec<usize> = (lo..hi).collect();
        let tr = dataset.subset_rows(&train);
        let va = dataset.subset_rows(&val);
        let col_sq = column_mean_squares(&tr.phi);
        let mut beta = vec![0.0; p];
        for (li, &lam) in lambdas.iter().enumerate() {
            let fit = cd_solve(&tr.phi, tr.y.as_slice(), &col_sq, lam, beta, opts.tol, opts.max_sweeps);
            if !fit.converged {
                nonconverged += 1;
            }
            beta = fit.beta;
            let pred = predict(&va.phi, &beta);
            sse[li] += pred
                .iter()
                .zip(va.y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    let cv_mse: Vec<f64> = sse.iter().map(|s| s / nf).collect();
    let best = cv_mse
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        )
        .0;

    let col_sq = column_mean_squares(&dataset.phi);
    let mut beta = vec![0.0; p];
    for &lam in &lambdas[..=best] {
        let fit = cd_solve(
            &dataset.phi,
            dataset.y.as_slice(),
            &col_sq,
            lam,
            beta,
            opts.tol,
            opts.max_sweeps,
        );
        if !fit.converged {
            nonconverged += 1;
        }
        beta = fit.beta;
    }
    Ok(LassoCvResult {
        lambda_opt: lambdas[best],
        beta_opt: beta,
        lambdas,
        cv_mse,
        nonconverged_fits: nonconverged,
    })
}

pub(crate) fn predict(phi: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let n = phi.nrows();
    let mut out = vec![0.0; n];
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (o, x) in out.iter_mut().zip(&phi.as_slice()[j * n..(j + 1) * n]) {
                *o += b * x;
            }
        }
    }
    out
}
