//! Scalar calibration theory for minimum-ℓ1 interpolation: truncated
//! Gaussian moments, the isotropic threshold equation, and the
//! spiked-isotropic head/tail risk decomposition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{CovarianceKind, CovarianceSpec};
use crate::numerics::{
    gaussian_pdf, gaussian_q, gaussian_q_inverse, soft_threshold_unchecked, Ensemble, NumericsError, RngStream,
};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("aspect ratio {gamma} is too close to 1: risk multiplier M = {m} >= 1 - 1e-6")]
    NearCritical { gamma: f64, m: f64 },
    #[error("calibration residual does not change sign on [{tau_lo:e}, {tau_hi:e}] (values {f_lo:e}, {f_hi:e})")]
    NoRoot {
        tau_lo: f64,
        tau_hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error(
        "fixed point did not converge after {iterations} iterations (last b² = {last_b2}, change {last_change:e})"
    )]
    NotConverged {
        iterations: usize,
        last_b2: f64,
        last_change: f64,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Truncated second moment with an underflow marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMoment {
    pub value: f64,
    /// Set when the true value is below the representable floor and 0 was returned.
    pub underflow: bool,
}

/// Thresholds at or above this report an underflowed moment.
pub const MOMENT_UNDERFLOW_KAPPA: f64 = 30.0;

/// ∫_0^∞ y² e^{−κy−y²/2} dy = ((1+κ²)Q(κ) − κφ(κ))/φ(κ), computed for large κ
/// as 2/(f₀f₁f₂) from the Mills-ratio continued fraction f_k = κ + (k+1)/f_{k+1},
/// which avoids the cancellation in the direct formula.
fn tail_second_moment_ratio(kappa: f64) -> f64 {
    let depth = 60 + (400.0 / kappa) as usize;
    let mut f = kappa;
    let mut head = [0.0; 3];
    for k in (0..depth).rev() {
        f = kappa + (k + 1) as f64 / f;
        if k < 3 {
            head[k] = f;
        }
    }
    2.0 / (head[0] * head[1] * head[2])
}

/// E[S²(g;κ)] = 2[(1+κ²)Q(κ) − κφ(κ)] for g ~ N(0,1).
pub fn truncated_second_moment(kappa: f64) -> Result<TailMoment, TheoryError> {
    if !(kappa >= 0.0) {
        return Err(TheoryError::Domain(format!("kappa must be >= 0, got {kappa}")));
    }
    if kappa >= MOMENT_UNDERFLOW_KAPPA {
        return Ok(TailMoment {
            value: 0.0,
            underflow: true,
        });
    }
    Ok(TailMoment {
        value: m2_unchecked(kappa),
        underflow: false,
    })
}

pub(crate) fn m2_unchecked(kappa: f64) -> f64 {
    if kappa >= MOMENT_UNDERFLOW_KAPPA {
        0.0
    } else if kappa >= 4.0 {
        2.0 * gaussian_pdf(kappa) * tail_second_moment_ratio(kappa)
    } else {
        2.0 * ((1.0 + kappa * kappa) * gaussian_q(kappa) - kappa * gaussian_pdf(kappa))
    }
}

/// (P(|g+c| > κ), E[(S(g+c;κ) − c)²]).
pub fn shifted_moments(c: f64, kappa: f64) -> Result<(f64, f64), TheoryError> {
    if !(kappa >= 0.0) {
        return Err(TheoryError::Domain(format!("kappa must be >= 0, got {kappa}")));
    }
    if !c.is_finite() {
        return Err(TheoryError::Domain(format!("shift must be finite, got {c}")));
    }
    Ok(shifted_unchecked(c, kappa))
}

fn shifted_unchecked(c: f64, kappa: f64) -> (f64, f64) {
    if c == 0.0 {
        return (2.0 * gaussian_q(kappa), m2_unchecked(kappa));
    }
    let a = kappa - c;
    let b = kappa + c;
    let k2 = 1.0 + kappa * kappa;
    let exceed = gaussian_q(a) + gaussian_q(b);
    // Upper region g > κ−c, lower region g < −κ−c, dead zone in between.
    let upper = k2 * gaussian_q(a) - b * gaussian_pdf(a);
    let lower = k2 * gaussian_q(b) - a * gaussian_pdf(b);
    let middle = c * c * (gaussian_q(-b) - gaussian_q(a)).max(0.0);
    (exceed, (upper + lower + middle).max(0.0))
}

/// Monte Carlo estimate of E[g·S(g;κ)] next to its exact value P(|g| > κ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteinCheck {
    pub mc_estimate: f64,
    pub exact: f64,
    pub std_error: f64,
}

pub fn stein_identity_check(kappa: f64, samples: usize, stream: RngStream) -> Result<SteinCheck, TheoryError> {
    if !(kappa >= 0.0) {
        return Err(TheoryError::Domain(format!("kappa must be >= 0, got {kappa}")));
    }
    if samples < 2 {
        return Err(TheoryError::Domain("need at least two samples".into()));
    }
    let draws = crate::numerics::sample(stream, Ensemble::Gaussian, samples);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for g in draws {
        let v = g * soft_threshold_unchecked(g, kappa);
        sum += v;
        sum_sq += v * v;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0) * m / (m - 1.0);
    Ok(SteinCheck {
        mc_estimate: mean,
        exact: 2.0 * gaussian_q(kappa),
        std_error: (var / m).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicCalibration {
    pub gamma: f64,
    pub sigma2: f64,
    pub kappa: f64,
    /// E[S²(g;κ)]
    pub m2: f64,
    /// γ·m2
    pub m: f64,
    /// Predicted excess risk σ²M/(1−M).
    pub alpha2: f64,
}

pub fn solve_isotropic(gamma: f64, sigma2: f64) -> Result<IsotropicCalibration, TheoryError> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(TheoryError::Domain(format!("gamma must exceed 1, got {gamma}")));
    }
    if !(sigma2 >= 0.0) {
        return Err(TheoryError::Domain(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    let kappa = gaussian_q_inverse(1.0 / (2.0 * gamma))?;
    let m2 = m2_unchecked(kappa);
    let m = gamma * m2;
    if m >= 1.0 - 1e-6 {
        return Err(TheoryError::NearCritical { gamma, m });
    }
    Ok(IsotropicCalibration {
        gamma,
        sigma2,
        kappa,
        m2,
        m,
        alpha2: sigma2 * m / (1.0 - m),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikedCalibration {
    pub tau: f64,
    /// b² = σ² + e_total
    pub b2: f64,
    pub kappa_head: Vec<f64>,
    pub kappa_tail: f64,
    pub c_head: Vec<f64>,
    pub e_head: f64,
    pub e_tail: f64,
    pub e_total: f64,
    /// Risk multiplier e_total / b².
    pub m: f64,
    pub calibration_residual: f64,
    /// 2b²(1/n)Σ(1+κᵢ²), an upper bound on e_head.
    pub head_bound: f64,
    pub iterations: usize,
}

struct SpikedProblem<'a> {
    n: f64,
    head_sqrt_lambda: Vec<f64>,
    tail_count: f64,
    tail_sqrt_lambda: f64,
    beta_head: &'a [f64],
}

impl SpikedProblem<'_> {
    fn shifts(&self, b: f64) -> Vec<f64> {
        self.head_sqrt_lambda
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let beta = self.beta_head.get(i).copied().unwrap_or(0.0);
                if b > 0.0 {
                    s * beta / b
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn residual(&self, tau: f64, c: &[f64]) -> f64 {
        let head: f64 = self
            .head_sqrt_lambda
            .iter()
            .zip(c)
            .map(|(s, &ci)| shifted_unchecked(ci, 1.0 / (tau * s)).0)
            .sum();
        let kt = 1.0 / (tau * self.tail_sqrt_lambda);
        (head + self.tail_count * 2.0 * gaussian_q(kt)) / self.n - 1.0
    }

    /// Bisection on log τ; the residual increases with τ.
    fn solve_tau(&self, c: &[f64]) -> Result<f64, TheoryError> {
        let mut lo = 1e-3
            / self
                .tail_sqrt_lambda
                .max(self.head_sqrt_lambda.iter().cloned().fold(0.0, f64::max));
        let mut hi = 1.0 / self.tail_sqrt_lambda;
        let mut f_lo = self.residual(lo, c);
        let mut f_hi = self.residual(hi, c);
        let mut grow = 0;
        while f_lo > 0.0 && grow < 200 {
            lo *= 0.5;
            f_lo = self.residual(lo, c);
            grow += 1;
        }
        while f_hi < 0.0 && grow < 400 {
            hi *= 2.0;
            f_hi = self.residual(hi, c);
            grow += 1;
        }
        if !(f_lo <= 0.0 && f_hi >= 0.0) {
            return Err(TheoryError::NoRoot {
                tau_lo: lo,
                tau_hi: hi,
                f_lo,
                f_hi,
            });
        }
        for _ in 0..300 {
            let mid = (lo * hi).sqrt();
            if !(mid > lo && mid < hi) {
                break;
            }
            let f = self.residual(mid, c);
            if f == 0.0 {
                return Ok(mid);
            }
            if f < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(if self.residual(lo, c).abs() <= self.residual(hi, c).abs() {
            lo
        } else {
            hi
        })
    }

    /// (e_head/b², e_tail/b², κ_head, κ_tail)
    fn risk_multipliers(&self, tau: f64, c: &[f64]) -> (f64, f64, Vec<f64>, f64) {
        let kappa_head: Vec<f64> = self.head_sqrt_lambda.iter().map(|s| 1.0 / (tau * s)).collect();
        let head: f64 = kappa_head
            .iter()
            .zip(c)
            .map(|(&k, &ci)| shifted_unchecked(ci, k).1)
            .sum::<f64>()
            / self.n;
        let kt = 1.0 / (tau * self.tail_sqrt_lambda);
        let tail = self.tail_count * m2_unchecked(kt) / self.n;
        (head, tail, kappa_head, kt)
    }
}

/// Solves the spiked-isotropic calibration at finite (n, p).
///
/// `beta_star` holds head coefficients (extra entries beyond k* must be zero);
/// `None` is the pure-noise model. Shifts are c_i = √λ_i β*_i / b for
/// unit-variance design entries.
pub fn solve_spiked(
    cov: &CovarianceSpec,
    n: usize,
    sigma2: f64,
    beta_star: Option<&[f64]>,
) -> Result<SpikedCalibration, TheoryError> {
    if n == 0 {
        return Err(TheoryError::Domain("n must be positive".into()));
    }
    if !(sigma2 >= 0.0) {
        return Err(TheoryError::Domain(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    let k = cov.k_star;
    let tail = cov.tail_dim();
    if let Some(b) = beta_star {
        if b.iter().skip(k).any(|&v| v != 0.0) {
            return Err(TheoryError::Domain("signal must be supported on the head".into()));
        }
    }
    let beta_head: &[f64] = match beta_star {
        Some(b) => &b[..k.min(b.len())],
        None => &[],
    };
    let has_signal = beta_head.iter().any(|&v| v != 0.0);
    let nf = n as f64;

    if k == 0 && !has_signal {
        // Pure isotropic: the calibration is closed form.
        let gamma = tail as f64 / nf;
        let iso = solve_isotropic(gamma, sigma2)?;
        let tau = 1.0 / (iso.kappa * cov.lambda_tail.sqrt());
        let b2 = sigma2 / (1.0 - iso.m);
        let e_total = sigma2 * iso.m / (1.0 - iso.m);
        return Ok(SpikedCalibration {
            tau,
            b2,
            kappa_head: Vec::new(),
            kappa_tail: iso.kappa,
            c_head: Vec::new(),
            e_head: 0.0,
            e_tail: e_total,
            e_total,
            m: iso.m,
            calibration_residual: gamma * 2.0 * gaussian_q(iso.kappa) - 1.0,
            head_bound: 0.0,
            iterations: 0,
        });
    }

    let problem = SpikedProblem {
        n: nf,
        head_sqrt_lambda: (0..k).map(|i| cov.eigenvalue(i).sqrt()).collect(),
        tail_count: tail as f64,
        tail_sqrt_lambda: cov.lambda_tail.sqrt(),
        beta_head,
    };
    let gamma = tail as f64 / nf;

    let finish = |b2: f64, tau: f64, c: Vec<f64>, iterations: usize| -> Result<SpikedCalibration, TheoryError> {
        let (mh, mt, kappa_head, kappa_tail) = problem.risk_multipliers(tau, &c);
        let m = mh + mt;
        if m >= 1.0 - 1e-6 {
            return Err(TheoryError::NearCritical { gamma, m });
        }
        let e_head = b2 * mh;
        let e_tail = b2 * mt;
        let head_bound = 2.0 * b2 * kappa_head.iter().map(|k| 1.0 + k * k).sum::<f64>() / nf;
        Ok(SpikedCalibration {
            tau,
            b2,
            calibration_residual: problem.residual(tau, &c),
            kappa_head,
            kappa_tail,
            c_head: c,
            e_head,
            e_tail,
            e_total: e_head + e_tail,
            m,
            head_bound,
            iterations,
        })
    };

    if !has_signal {
        let c = vec![0.0; k];
        let tau = problem.solve_tau(&c)?;
        let (mh, mt, _, _) = problem.risk_multipliers(tau, &c);
        let m = mh + mt;
        if m >= 1.0 - 1e-6 {
            return Err(TheoryError::NearCritical { gamma, m });
        }
        let b2 = sigma2 / (1.0 - m);
        return finish(b2, tau, c, 0);
    }

    // Damped fixed point on b² = σ² + b²·M(b).
    let mut b2 = sigma2.max(1e-12) + beta_head.iter().map(|v| v * v).sum::<f64>();
    let mut change = f64::INFINITY;
    for it in 1..=500 {
        let c = problem.shifts(b2.sqrt());
        let tau = problem.solve_tau(&c)?;
        let (mh, mt, _, _) = problem.risk_multipliers(tau, &c);
        let target = sigma2 + b2 * (mh + mt);
        let next = 0.5 * b2 + 0.5 * target;
        change = (next - b2).abs();
        b2 = next;
        if change <= 1e-10 * b2.max(1e-300) {
            let c = problem.shifts(b2.sqrt());
            let tau = problem.solve_tau(&c)?;
            let (mh, mt, _, _) = problem.risk_multipliers(tau, &c);
            // Report b² consistent with the final multipliers.
            let m = mh + mt;
            if m >= 1.0 - 1e-6 {
                return Err(TheoryError::NearCritical { gamma, m });
            }
            let b2_final = sigma2 + b2 * m;
            return finish(b2_final, tau, c, it);
        }
    }
    Err(TheoryError::NotConverged {
        iterations: 500,
        last_b2: b2,
        last_change: change,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RateKind {
    Isotropic,
    /// Spiked head of k* eigenvalues λ_head over a flat tail of dimension γ·n.
    Spiked {
        n: usize,
        k_star: usize,
        lambda_head: f64,
        lambda_tail: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub gamma: f64,
    pub predicted_risk: f64,
    pub inv_log_gamma: f64,
}

pub fn rate_prediction(gammas: &[f64], sigma2: f64, kind: RateKind) -> Result<Vec<RatePoint>, TheoryError> {
    gammas
        .iter()
        .map(|&gamma| {
            if !(gamma > 1.0) {
                return Err(TheoryError::Domain(format!("gamma must exceed 1, got {gamma}")));
            }
            let predicted_risk = match kind {
                RateKind::Isotropic => solve_isotropic(gamma, sigma2)?.alpha2,
                RateKind::Spiked {
                    n,
                    k_star,
                    lambda_head,
                    lambda_tail,
                } => {
                    let tail = (gamma * n as f64).round() as usize;
                    let cov = crate::design::build_covariance(
                        if k_star == 0 {
                            CovarianceKind::Isotropic
                        } else {
                            CovarianceKind::SpikedIsotropic
                        },
                        tail + k_star,
                        k_star,
                        lambda_head,
                        lambda_tail,
                    )
                    .map_err(|e| TheoryError::Domain(e.to_string()))?;
                    solve_spiked(&cov, n, sigma2, None)?.e_total
                }
            };
            Ok(RatePoint {
                gamma,
                predicted_risk,
                inv_log_gamma: 1.0 / gamma.ln(),
            })
        })
        .collect()
}

/// Adaptive 7/15-point Gauss–Kronrod quadrature to an absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
        const XK: [f64; 8] = [
            0.991_455_371_120_812_6,
            0.949_107_912_342_758_5,
            0.864_864_423_359_769_1,
            0.741_531_185_599_394_4,
            0.586_087_235_467_691_1,
            0.405_845_151_377_397_2,
            0.207_784_955_007_898_5,
            0.0,
        ];
        const WK: [f64; 8] = [
            0.022_935_322_010_529_22,
            0.063_092_092_629_978_55,
            0.104_790_010_322_250_2,
            0.140_653_259_715_525_9,
            0.169_004_726_639_267_9,
            0.190_350_578_064_785_4,
            0.204_432_940_075_298_9,
            0.209_482_141_084_728_0,
        ];
        const WG: [f64; 4] = [
            0.129_484_966_168_869_7,
            0.279_705_391_489_276_7,
            0.381_830_050_505_118_9,
            0.417_959_183_673_469_4,
        ];
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut kron = WK[7] * fc;
        let mut gauss = WG[3] * fc;
        for i in 0..7 {
            let dx = h * XK[i];
            let s = f(c - dx) + f(c + dx);
            kron += WK[i] * s;
            if i % 2 == 1 {
                gauss += WG[i / 2] * s;
            }
        }
        (kron * h, ((kron - gauss) * h).abs())
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = gk15(f, a, b);
        if err <= tol || depth >= 50 {
            return val;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth + 1) + recurse(f, m, b, 0.5 * tol, depth + 1)
    }
    recurse(f, a, b, abs_tol, 0)
}

/// Quadrature value of E[S²(g;κ)] = 2∫_κ^{κ+12} (x−κ)²φ(x) dx.
pub fn truncated_second_moment_quadrature(kappa: f64) -> f64 {
    2.0 * integrate(
        &|x: f64| (x - kappa).powi(2) * gaussian_pdf(x),
        kappa,
        kappa + 12.0,
        1e-13,
    )
}

/// Quadrature values of (P(|g+c|>κ), E[(S(g+c;κ)−c)²]) split at the kinks.
pub fn shifted_moments_quadrature(c: f64, kappa: f64) -> (f64, f64) {
    let lo_kink = -kappa - c;
    let hi_kink = kappa - c;
    let a = lo_kink.min(-12.0);
    let b = hi_kink.max(12.0);
    let pieces = [(a - 12.0, lo_kink), (lo_kink, hi_kink), (hi_kink, b + 12.0)];
    let moment = |x: f64| (soft_threshold_unchecked(x + c, kappa) - c).powi(2) * gaussian_pdf(x);
    let second: f64 = pieces
        .iter()
        .filter(|(l, r)| r > l)
        .map(|&(l, r)| integrate(&moment, l, r, 1e-13))
        .sum();
    let exceed = integrate(&gaussian_pdf, hi_kink, hi_kink + 40.0, 1e-14)
        + integrate(&gaussian_pdf, lo_kink - 40.0, lo_kink, 1e-14);
    (exceed, second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::build_covariance;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn moment_values() {
        assert!((truncated_second_moment(0.0).unwrap().value - 1.0).abs() < 1e-15);
        // mpmath at 40 digits
        let cases = [
            (1.0, 0.150_679_566_687_541_5),
            (0.67449, 0.298_793_980_266_927_45),
            (3.0, 4.068_701_609_738_474_7e-4),
            (5.0, 3.868_659_037_510_632_8e-8),
            (10.0, 2.905_855_391_423_960_6e-25),
        ];
        for (k, want) in cases {
            let got = truncated_second_moment(k).unwrap().value;
            assert!(rel(got, want) < 1e-11, "m2({k}) = {got:e}, want {want:e}");
        }
        let far = truncated_second_moment(31.0).unwrap();
        assert!(far.underflow && far.value == 0.0);
        assert!(truncated_second_moment(-0.1).is_err());
    }

    #[test]
    fn large_kappa_branch_is_continuous() {
        let below = 2.0 * ((1.0 + 16.0) * gaussian_q(4.0) - 4.0 * gaussian_pdf(4.0));
        let above = m2_unchecked(4.0);
        assert!(rel(above, below) < 1e-11);
    }

    #[test]
    fn moment_matches_quadrature() {
        for i in 0..=40 {
            let k = 0.15 * i as f64;
            let q = truncated_second_moment_quadrature(k);
            assert!((m2_unchecked(k) - q).abs() < 1e-12, "kappa {k}");
        }
    }

    #[test]
    fn shifted_examples() {
        let cases = [
            (1.5, 1.0, 0.697_672_126_599_789_2, 1.204_182_801_686_088_3),
            (-2.0, 0.5, 0.939_402_464_056_918_1, 1.119_141_685_419_098_8),
            (3.0, 2.0, 0.841_345_032_720_117_8, 4.424_767_733_243_338_7),
        ];
        for (c, k, p, m) in cases {
            let (gp, gm) = shifted_moments(c, k).unwrap();
            assert!(rel(gp, p) < 1e-13, "exceed({c},{k})");
            assert!(rel(gm, m) < 1e-12, "moment({c},{k})");
        }
        assert_eq!(shifted_moments(0.0, 0.0).unwrap(), (1.0, 1.0));
        let (_, m) = shifted_moments(0.5, 0.0).unwrap();
        assert!((m - 1.0).abs() < 1e-14);
        let (p, m) = shifted_moments(0.0, 1.3).unwrap();
        assert_eq!(p, 2.0 * gaussian_q(1.3));
        assert_eq!(m, m2_unchecked(1.3));
        assert!(shifted_moments(1.0, -1.0).is_err());
    }

    #[test]
    fn shifted_matches_quadrature() {
        for ci in 0..=10 {
            for ki in 0..=6 {
                let c = -5.0 + ci as f64;
                let k = ki as f64;
                let (p, m) = shifted_unchecked(c, k);
                let (qp, qm) = shifted_moments_quadrature(c, k);
                assert!((p - qp).abs() < 1e-9, "exceed c={c} k={k}: {p} vs {qp}");
                assert!((m - qm).abs() < 1e-9, "moment c={c} k={k}: {m} vs {qm}");
            }
        }
    }

    #[test]
    fn isotropic_values() {
        let s = solve_isotropic(2.0, 1.0).unwrap();
        assert!((s.kappa - 0.674_489_750_196_081_7).abs() < 1e-12);
        assert!((s.m - 0.597_588_258_608_091_6).abs() < 1e-11);
        assert!((s.alpha2 - 1.485_016_954_378_825_8).abs() < 1e-10);
        let s = solve_isotropic(30.0, 1.0).unwrap();
        assert!((s.kappa - 2.128_045_234_184_984_7).abs() < 1e-11);
        assert!((s.alpha2 - 0.308_751_692_451_929_3).abs() < 1e-10);
        for (g, want) in [(1.5, ()), (5.0, ()), (100.0, ())].map(|(g, _)| (g, ())) {
            let _ = want;
            let s = solve_isotropic(g, 1.0).unwrap();
            assert!((g * 2.0 * gaussian_q(s.kappa) - 1.0).abs() < 1e-10);
        }
        assert!(solve_isotropic(1.0, 1.0).is_err());
        assert!(matches!(
            solve_isotropic(1.0 + 1e-9, 1.0),
            Err(TheoryError::NearCritical { .. })
        ));
    }

    #[test]
    fn spiked_reduces_to_isotropic() {
        let cov = build_covariance(CovarianceKind::Isotropic, 800, 0, 1.0, 1.0).unwrap();
        let sp = solve_spiked(&cov, 200, 1.0, None).unwrap();
        let iso = solve_isotropic(4.0, 1.0).unwrap();
        assert!((sp.kappa_tail - iso.kappa).abs() < 1e-9);
        assert!((sp.e_total - iso.alpha2).abs() < 1e-9);
        assert!((sp.m - iso.m).abs() < 1e-9);
    }

    #[test]
    fn spiked_setup3_scale() {
        let cov = build_covariance(CovarianceKind::SpikedIsotropic, 1605, 5, 100.0, 1.0).unwrap();
        let sp = solve_spiked(&cov, 200, 1.0, None).unwrap();
        assert!(sp.calibration_residual.abs() <= 1e-9);
        assert!((sp.b2 - 1.0 - sp.e_total).abs() <= 1e-9);
        assert!(sp.e_head <= sp.head_bound);
        // Frozen from an independent 40-digit solve.
        assert!((sp.e_total - 0.525_68).abs() < 5e-5, "e_total {}", sp.e_total);
        assert!((sp.e_tail / sp.e_total - 0.9437).abs() < 1e-3);
    }

    #[test]
    fn spiked_with_signal_converges() {
        let cov = build_covariance(CovarianceKind::SpikedIsotropic, 1605, 5, 100.0, 1.0).unwrap();
        let beta = [3.0, 3.0, 3.0, 0.0, 0.0];
        let sp = solve_spiked(&cov, 200, 1.0, Some(&beta)).unwrap();
        assert!(sp.calibration_residual.abs() <= 1e-9);
        assert!((sp.b2 - 1.0 - sp.e_total).abs() <= 1e-9 * sp.b2);
        assert!(sp.e_head <= sp.head_bound);
        assert!(sp.c_head[0] > 0.0 && sp.c_head[4] == 0.0);
    }

    #[test]
    fn rate_prediction_guards_and_monotone() {
        assert!(rate_prediction(&[2.0, 1.0], 1.0, RateKind::Isotropic).is_err());
        let grid: Vec<f64> = (0..60).map(|i| 1.5 * (100.0f64 / 1.5).powf(i as f64 / 59.0)).collect();
        let pts = rate_prediction(&grid, 1.0, RateKind::Isotropic).unwrap();
        assert!(pts.windows(2).all(|w| w[1].predicted_risk < w[0].predicted_risk));
    }

    #[test]
    fn stein_kappa_two() {
        let s = stein_identity_check(2.0, 10_000, RngStream::new(1, 2)).unwrap();
        assert!((s.exact - 0.045_500_263_896_358_41).abs() < 1e-15);
        assert!((s.mc_estimate - s.exact).abs() < 5.0 * s.std_error);
    }
}
