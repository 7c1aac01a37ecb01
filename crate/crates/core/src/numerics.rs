//! Special functions, seeded randomness, soft-thresholding and small
//! regression utilities shared by every other module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 1/sqrt(2*pi)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

const SQRT_PI_OVER_2: f64 = 1.253_314_137_315_500_3;

/// Switch point between the erfc route and the continued-fraction route for Q.
const TAIL_SWITCH: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// exp(-x^2/2) evaluated without losing digits to the rounding of x^2.
fn exp_half_square(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 4.0 {
        return (-0.5 * ax * ax).exp();
    }
    // High part has 24 significant bits, so its square is exact in f64.
    let hi = (ax as f32) as f64;
    let lo = ax - hi;
    (-0.5 * hi * hi).exp() * (-0.5 * lo * (ax + hi)).exp()
}

/// Standard normal density.
pub fn gaussian_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * exp_half_square(x)
}

/// Mills ratio Q(x)/phi(x) for x >= TAIL_SWITCH, by the Laplace continued
/// fraction 1/(x+ 1/(x+ 2/(x+ 3/(x+ ...)))) evaluated with modified Lentz.
fn mills_ratio_cf(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    1.0 / f
}

/// Mills ratio R(x) = Q(x)/phi(x).
pub fn mills_ratio(x: f64) -> f64 {
    if x >= TAIL_SWITCH {
        mills_ratio_cf(x)
    } else {
        // erfcx(y) = exp(y^2) erfc(y); only moderate x reach this branch.
        let y = x / std::f64::consts::SQRT_2;
        SQRT_PI_OVER_2 * libm::erfc(y) * (y * y).exp()
    }
}

/// Upper-tail probability Q(x) = P(g > x) for a standard normal g.
///
/// Uses the complementary error function in the bulk and phi(x)*R(x) in the
/// upper tail, never 1 - CDF.
pub fn gaussian_q(x: f64) -> f64 {
    if x >= TAIL_SWITCH {
        gaussian_pdf(x) * mills_ratio_cf(x)
    } else if x >= 0.0 {
        0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
    } else {
        1.0 - gaussian_q(-x)
    }
}

/// Inverse of [`gaussian_q`]: returns x with Q(x) = p.
pub fn gaussian_q_inverse(p: f64) -> Result<f64, NumericsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericsError::Domain(format!("probability must lie in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        // 1 - p is exact here (Sterbenz).
        return Ok(-upper_q_inverse(1.0 - p));
    }
    Ok(upper_q_inverse(p))
}

/// Solves Q(x) = p for p in (0, 1/2) with a safeguarded Newton iteration on
/// log Q, whose derivative is -1/R(x).
fn upper_q_inverse(p: f64) -> f64 {
    let target = p.ln();
    let mut lo = 0.0_f64;
    let mut hi = 40.0_f64;
    let mut x = (-2.0 * p.ln()).sqrt().clamp(lo, hi);
    for _ in 0..200 {
        let q = gaussian_q(x);
        let f = q.ln() - target;
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if (q - p).abs() <= 1e-15 * p {
            return x;
        }
        let step = f * mills_ratio(x);
        let mut next = x + step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

/// Soft-thresholding S(x; kappa) = sign(x) (|x| - kappa)_+.
pub fn soft_threshold(x: f64, kappa: f64) -> Result<f64, NumericsError> {
    if kappa < 0.0 || kappa.is_nan() {
        return Err(NumericsError::Domain(format!(
            "threshold must be nonnegative, got {kappa}"
        )));
    }
    Ok(soft_threshold_unchecked(x, kappa))
}

#[inline]
pub(crate) fn soft_threshold_unchecked(x: f64, kappa: f64) -> f64 {
    if x > kappa {
        x - kappa
    } else if x < -kappa {
        x + kappa
    } else {
        0.0
    }
}

/// Polynomial Mills-ratio bounds on Q(kappa):
/// lower = phi(k)(1/k - 1/k^3 + 3/k^5 - 15/k^7), upper = phi(k)(1/k - 1/k^3 + 3/k^5).
///
/// The sandwich is only guaranteed for kappa >= 2 or so; small kappa still
/// returns the two polynomials.
pub fn mills_bounds(kappa: f64) -> Result<(f64, f64), NumericsError> {
    if !(kappa > 0.0) {
        return Err(NumericsError::Domain(format!("kappa must be positive, got {kappa}")));
    }
    let phi = gaussian_pdf(kappa);
    let inv = 1.0 / kappa;
    let inv2 = inv * inv;
    let upper_poly = inv * (1.0 - inv2 + 3.0 * inv2 * inv2);
    let lower_poly = upper_poly - 15.0 * inv * inv2 * inv2 * inv2;
    Ok((phi * lower_poly, phi * upper_poly))
}

/// Ordinary least squares line through (xs, ys).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// Set when all responses are equal; r_squared is reported as 1.
    #[serde(default)]
    pub constant_response: bool,
}

pub fn simple_ols(xs: &[f64], ys: &[f64]) -> Result<RegressionFit, NumericsError> {
    if xs.len() != ys.len() {
        return Err(NumericsError::Degenerate(format!(
            "length mismatch: {} x values vs {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(NumericsError::Degenerate(format!(
            "need at least 3 points, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(NumericsError::Degenerate("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if syy == 0.0 {
        return Ok(RegressionFit {
            intercept,
            slope,
            r_squared: 1.0,
            n_points: xs.len(),
            constant_response: true,
        });
    }
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r_squared = (1.0 - ss_res / syy).clamp(0.0, 1.0);
    Ok(RegressionFit {
        intercept,
        slope,
        r_squared,
        n_points: xs.len(),
        constant_response: false,
    })
}

/// Feature ensembles; all are scaled to unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    Gaussian,
    Rademacher,
    #[serde(rename = "student_t4")]
    StudentT4,
}

impl Ensemble {
    pub const ALL: [Ensemble; 3] = [Ensemble::Gaussian, Ensemble::Rademacher, Ensemble::StudentT4];

    pub fn as_str(self) -> &'static str {
        match self {
            Ensemble::Gaussian => "gaussian",
            Ensemble::Rademacher => "rademacher",
            Ensemble::StudentT4 => "student_t4",
        }
    }
}

impl std::fmt::Display for Ensemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Ensemble {
    type Err = NumericsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Ensemble::Gaussian),
            "rademacher" => Ok(Ensemble::Rademacher),
            "student_t4" | "studentt4" | "t4" => Ok(Ensemble::StudentT4),
            other => Err(NumericsError::Domain(format!("unknown ensemble '{other}'"))),
        }
    }
}

/// Immutable descriptor of a random stream. Generator state is derived on
/// demand, so equal descriptors always replay the same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub base_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        Self { base_seed, stream_id }
    }

    /// ChaCha20 keyed by the base seed, positioned on the stream id.
    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.base_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// A child stream whose id mixes this id with `key`.
    pub fn derive(&self, key: u64) -> RngStream {
        RngStream::new(self.base_seed, mix_keys(&[self.stream_id, key]))
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Platform-stable hash of a key tuple, used to derive stream ids.
pub fn mix_keys(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x6a09_e667_f3bc_c909_u64, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Draws one unit-variance value from `dist`.
#[inline]
pub fn draw<R: Rng + ?Sized>(rng: &mut R, dist: Ensemble, t4: &StudentT<f64>) -> f64 {
    match dist {
        Ensemble::Gaussian => StandardNormal.sample(rng),
        Ensemble::Rademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        // Var(t_4) = 2
        Ensemble::StudentT4 => t4.sample(rng) / std::f64::consts::SQRT_2,
    }
}

pub(crate) fn student_t4() -> StudentT<f64> {
    StudentT::new(4.0).expect("4 degrees of freedom is valid")
}

/// Fills `out` with i.i.d. unit-variance draws.
pub fn fill_sample<R: Rng + ?Sized>(rng: &mut R, dist: Ensemble, out: &mut [f64]) {
    let t4 = student_t4();
    for v in out.iter_mut() {
        *v = draw(rng, dist, &t4);
    }
}

/// `count` i.i.d. unit-variance draws from the stream.
pub fn sample(stream: RngStream, dist: Ensemble, count: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    let mut out = vec![0.0; count];
    fill_sample(&mut rng, dist, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn pdf_values() {
        assert!(rel(gaussian_pdf(0.0), 0.398_942_280_401_432_7) < 1e-15);
        assert!(rel(gaussian_pdf(1.0), 0.241_970_724_519_143_35) < 1e-14);
        assert!(rel(gaussian_pdf(10.0), 7.694_598_626_706_419_3e-23) < 1e-14);
        let far = gaussian_pdf(38.0);
        assert!(far > 0.0);
        assert!(rel(far, 1.097_221_052_007_593e-314) < 1e-8);
    }

    #[test]
    fn q_matches_extended_precision() {
        // mpmath at 40 digits
        let cases = [
            (0.0, 0.5),
            (0.674_489_750_196_081_7, 0.250_000_000_000_000_012),
            (2.0, 0.022_750_131_948_179_207),
            (5.0, 2.866_515_718_791_939_1e-7),
            (6.0, 9.865_876_450_376_981e-10),
            (10.0, 7.619_853_024_160_526e-24),
            (20.0, 2.753_624_118_606_233_7e-89),
            (30.0, 4.906_713_927_148_187e-198),
            (37.0, 5.725_571_222_524_577e-300),
            (-8.0, 0.999_999_999_999_999_4),
        ];
        for (x, want) in cases {
            let got = gaussian_q(x);
            assert!(rel(got, want) < 1e-13, "Q({x}) = {got:e}, want {want:e}");
        }
    }

    #[test]
    fn q_inverse_examples() {
        assert_eq!(gaussian_q_inverse(0.5).unwrap(), 0.0);
        let x = gaussian_q_inverse(0.25).unwrap();
        assert!((x - 0.674_489_750_196_081_7).abs() < 1e-12);
        let x = gaussian_q_inverse(1.0 / 60.0).unwrap();
        assert!((x - 2.128_045_234_184_984_7).abs() < 1e-11);
        for p in [1e-300, 1e-20, 1e-5, 0.1, 0.3, 0.7, 0.99] {
            let x = gaussian_q_inverse(p).unwrap();
            assert!((gaussian_q(x) - p).abs() <= 1e-12 * p, "p={p}");
        }
        assert!(gaussian_q_inverse(0.0).is_err());
        assert!(gaussian_q_inverse(1.0).is_err());
        assert!(gaussian_q_inverse(f64::NAN).is_err());
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(2.5, 1.0).unwrap(), 1.5);
        assert_eq!(soft_threshold(-0.3, 1.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-4.25, 0.0).unwrap(), -4.25);
        assert!(soft_threshold(1.0, -0.1).is_err());
    }

    #[test]
    fn mills_bounds_examples() {
        let (lo, hi) = mills_bounds(2.0).unwrap();
        let q = gaussian_q(2.0);
        assert!(lo <= q && q <= hi);
        let (lo, hi) = mills_bounds(5.0).unwrap();
        let q = gaussian_q(5.0);
        assert!(lo <= q && q <= hi);
        assert!(hi - lo <= 1e-3 * q);
        // small kappa: values come back, no bracketing promise
        let (lo, hi) = mills_bounds(0.5).unwrap();
        assert!(lo.is_finite() && hi.is_finite());
        assert!(mills_bounds(0.0).is_err());
    }

    #[test]
    fn ols_examples() {
        let fit = simple_ols(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-14);
        assert!(fit.intercept.abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let flat = simple_ols(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(flat.constant_response);
        assert_eq!(flat.slope, 0.0);
        assert_eq!(flat.r_squared, 1.0);

        // Sxy^2 / (Sxx Syy) = 4.7^2 / (5 * 4.5)
        let fit = simple_ols(&[0.0, 1.0, 2.0, 3.0], &[0.1, 0.9, 2.2, 2.8]).unwrap();
        assert!((fit.r_squared - 22.09 / 22.5).abs() < 1e-12);
        assert!((fit.slope - 0.94).abs() < 1e-12);

        assert!(simple_ols(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(simple_ols(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rademacher_support_and_determinism() {
        let s = RngStream::new(7, 3);
        let v = sample(s, Ensemble::Rademacher, 64);
        assert!(v.iter().all(|&x| x == 1.0 || x == -1.0));
        let a = sample(s, Ensemble::Gaussian, 100);
        let b = sample(s, Ensemble::Gaussian, 100);
        assert_eq!(a, b);
        let c = sample(RngStream::new(7, 4), Ensemble::Gaussian, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn student_t4_unit_variance_median_of_means() {
        let v = sample(RngStream::new(11, 0), Ensemble::StudentT4, 1_000_000);
        // t4 has infinite kurtosis; median of 20 block variances is robust
        let mut blocks: Vec<f64> = v
            .chunks(50_000)
            .map(|c| c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64)
            .collect();
        blocks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = 0.5 * (blocks[9] + blocks[10]);
        assert!((0.97..=1.03).contains(&med), "median block variance {med}");
    }

    #[test]
    fn mix_keys_is_stable() {
        // frozen: stream ids must not change between releases
        assert_eq!(mix_keys(&[1, 2, 3]), mix_keys(&[1, 2, 3]));
        assert_ne!(mix_keys(&[1, 2, 3]), mix_keys(&[1, 3, 2]));
    }
}
