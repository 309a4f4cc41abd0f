//! Numerical statistics: regularized incomplete beta and its inverse,
//! Clopper-Pearson binomial confidence intervals, logistic regression via
//! iteratively reweighted least squares, and exact extremization of a
//! logistic surface over axis-aligned boxes.

use thiserror::Error;

use crate::linalg::{solve_dense, LinalgError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum StatsError {
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("observed information matrix is singular")]
    SingularInformation,
    #[error("dimension mismatch: model has {model} dimensions, box has {other}")]
    DimensionMismatch { model: usize, other: usize },
}

impl From<LinalgError> for StatsError {
    fn from(_: LinalgError) -> Self {
        StatsError::SingularInformation
    }
}

/// Binomial success count out of a number of trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinomialSample {
    pub k: u64,
    pub n: u64,
}

/// Two-sided confidence interval at a given coverage level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// Axis-aligned box in state units.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        debug_assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        AxisBox { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Fitted logistic regression: P(z=1 | x) = sigmoid(weights . x + intercept).
/// The covariance is over the parameter vector [weights..., intercept].
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub fisher_covariance: Vec<Vec<f64>>,
}

impl LogisticModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.intercept
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// --- special functions --------------------------------------------------

/// Lanczos approximation (g = 7, 9 coefficients), |rel err| < 1e-13.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().abs().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        let m2 = 2.0 * m_f;
        let aa = m_f * (b - m_f) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m_f) * (qab + m_f) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b), absolute error <= 1e-12.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&x) || a <= 0.0 || b <= 0.0 || !x.is_finite() {
        return Err(StatsError::Domain(format!("beta_cdf(x={x}, a={a}, b={b})")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let bt = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    // Use the tail that converges fastest; switch at the mean a/(a+b).
    if x < a / (a + b) {
        Ok(bt * beta_cf(a, b, x) / a)
    } else {
        Ok(1.0 - bt * beta_cf(b, a, 1.0 - x) / b)
    }
}

fn beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)).exp()
}

/// Inverse of [`beta_cdf`] in x: bisection backbone plus a Newton polish.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&p) || a <= 0.0 || b <= 0.0 || !p.is_finite() {
        return Err(StatsError::Domain(format!("beta_quantile(p={p}, a={a}, b={b})")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if beta_cdf(mid, a, b)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..8 {
        let f = beta_cdf(x, a, b)? - p;
        let df = beta_pdf(x, a, b);
        if df <= 0.0 {
            break;
        }
        let step = f / df;
        let next = (x - step).clamp(lo, hi);
        if (next - x).abs() < 1e-16 {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Exact (conservative) two-sided binomial confidence interval.
pub fn clopper_pearson(s: BinomialSample, alpha: f64) -> Result<ConfidenceInterval, StatsError> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(StatsError::Domain(format!("clopper_pearson(alpha={alpha})")));
    }
    if s.n == 0 || s.k > s.n {
        return Err(StatsError::Domain(format!("clopper_pearson(k={}, n={})", s.k, s.n)));
    }
    let (k, n) = (s.k as f64, s.n as f64);
    let lo = if s.k == 0 { 0.0 } else { beta_quantile(alpha / 2.0, k, n - k + 1.0)? };
    let hi = if s.k == s.n { 1.0 } else { beta_quantile(1.0 - alpha / 2.0, k + 1.0, n - k)? };
    Ok(ConfidenceInterval { lo, hi, level: 1.0 - alpha })
}

/// Inverse standard normal CDF (Acklam's rational approximation,
/// |rel err| < 1.2e-9). Used for Wald bands.
pub fn normal_quantile(p: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&p) || p == 0.0 || p == 1.0 {
        return Err(StatsError::Domain(format!("normal_quantile(p={p})")));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    Ok(x)
}

// --- logistic regression ------------------------------------------------

const RIDGE: f64 = 1e-8;
const IRLS_TOL: f64 = 1e-10;
const IRLS_MAX_ITERS: usize = 100;

/// The score (gradient of the ridge-penalized log-likelihood) at the given
/// parameters, in the units of `xs`. Exposed for stationarity checks.
pub fn logistic_score(
    xs: &[Vec<f64>],
    zs: &[bool],
    weights: &[f64],
    intercept: f64,
) -> Vec<f64> {
    let d = weights.len();
    let mut g = vec![0.0; d + 1];
    for (x, &z) in xs.iter().zip(zs) {
        let eta = weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + intercept;
        let resid = (if z { 1.0 } else { 0.0 }) - sigmoid(eta);
        for j in 0..d {
            g[j] += resid * x[j];
        }
        g[d] += resid;
    }
    for j in 0..d {
        g[j] -= RIDGE * weights[j];
    }
    g[d] -= RIDGE * intercept;
    g
}

/// Maximum-likelihood logistic fit by Newton / IRLS with a small ridge as a
/// separation guard. Inputs are standardized internally for conditioning;
/// the reported parameters and covariance are in raw units.
pub fn fit_logistic(xs: &[Vec<f64>], zs: &[bool]) -> Result<LogisticModel, StatsError> {
    if xs.len() != zs.len() || xs.len() < 2 {
        return Err(StatsError::DegenerateData(format!("{} points", xs.len())));
    }
    let d = xs[0].len();
    if d == 0 || xs.iter().any(|x| x.len() != d) {
        return Err(StatsError::DegenerateData("inconsistent feature dimensions".into()));
    }
    let pos = zs.iter().filter(|&&z| z).count();
    if pos == 0 || pos == zs.len() {
        return Err(StatsError::DegenerateData("single label class".into()));
    }

    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for j in 0..d {
            mean[j] += x[j];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut sd = vec![0.0; d];
    for x in xs {
        for j in 0..d {
            sd[j] += (x[j] - mean[j]).powi(2);
        }
    }
    for s in &mut sd {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let std_xs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| (0..d).map(|j| (x[j] - mean[j]) / sd[j]).collect())
        .collect();

    // theta = [w_1..w_d, c] in standardized units.
    let mut theta = vec![0.0; d + 1];
    let mut hess = vec![vec![0.0; d + 1]; d + 1];
    for _ in 0..IRLS_MAX_ITERS {
        let grad = logistic_score(&std_xs, zs, &theta[..d], theta[d]);
        for row in &mut hess {
            row.fill(0.0);
        }
        for x in &std_xs {
            let eta = theta[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + theta[d];
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-12);
            for j in 0..=d {
                let xj = if j < d { x[j] } else { 1.0 };
                for l in j..=d {
                    let xl = if l < d { x[l] } else { 1.0 };
                    hess[j][l] += w * xj * xl;
                }
            }
        }
        for j in 0..=d {
            hess[j][j] += RIDGE;
            for l in 0..j {
                hess[j][l] = hess[l][j];
            }
        }
        let step = solve_dense(&hess, &grad)?;
        let mut max_step: f64 = 0.0;
        for j in 0..=d {
            theta[j] += step[j];
            max_step = max_step.max(step[j].abs());
        }
        if max_step <= IRLS_TOL {
            break;
        }
    }

    // Covariance in standardized units: inverse of the ridged information.
    let mut cov_std = vec![vec![0.0; d + 1]; d + 1];
    for j in 0..=d {
        let mut e = vec![0.0; d + 1];
        e[j] = 1.0;
        let col = solve_dense(&hess, &e)?;
        for l in 0..=d {
            cov_std[l][j] = col[l];
        }
    }

    // Un-standardize: w_raw = w_std / sd; c_raw = c_std - sum w_std * mean / sd.
    // theta_raw = A theta_std with A = [[diag(1/sd), 0], [-(mean/sd)^T, 1]].
    let mut a = vec![vec![0.0; d + 1]; d + 1];
    for j in 0..d {
        a[j][j] = 1.0 / sd[j];
        a[d][j] = -mean[j] / sd[j];
    }
    a[d][d] = 1.0;
    let weights: Vec<f64> = (0..d).map(|j| theta[j] / sd[j]).collect();
    let intercept = theta[d] - (0..d).map(|j| theta[j] * mean[j] / sd[j]).sum::<f64>();
    let mut cov = vec![vec![0.0; d + 1]; d + 1];
    for i in 0..=d {
        for j in 0..=d {
            let mut acc = 0.0;
            for p in 0..=d {
                for q in 0..=d {
                    acc += a[i][p] * cov_std[p][q] * a[j][q];
                }
            }
            cov[i][j] = acc;
        }
    }

    if !weights.iter().chain([&intercept]).all(|v| v.is_finite()) {
        return Err(StatsError::SingularInformation);
    }
    Ok(LogisticModel { weights, intercept, fisher_covariance: cov })
}

/// Exact (min, max) of the fitted probability surface over an axis-aligned
/// box. The score is affine, so each dimension independently contributes
/// its lower or upper bound by the sign of the weight.
pub fn logistic_range_over_box(m: &LogisticModel, b: &AxisBox) -> Result<(f64, f64), StatsError> {
    if m.weights.len() != b.dim() {
        return Err(StatsError::DimensionMismatch { model: m.weights.len(), other: b.dim() });
    }
    let mut score_lo = m.intercept;
    let mut score_hi = m.intercept;
    for (j, &w) in m.weights.iter().enumerate() {
        if w >= 0.0 {
            score_lo += w * b.lower[j];
            score_hi += w * b.upper[j];
        } else {
            score_lo += w * b.upper[j];
            score_hi += w * b.lower[j];
        }
    }
    Ok((sigmoid(score_lo), sigmoid(score_hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_cdf_trivial() {
        assert!((beta_cdf(0.5, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(beta_cdf(1.0, 3.0, 4.0).unwrap(), 1.0);
        assert_eq!(beta_cdf(0.0, 3.0, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn beta_cdf_against_quadrature() {
        // Frozen 20,000-point Simpson-rule value for I_0.3(2, 5).
        let oracle = 0.579_825_000_000_000_3;
        assert!((beta_cdf(0.3, 2.0, 5.0).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn beta_cdf_domain_errors() {
        assert!(beta_cdf(-0.1, 1.0, 1.0).is_err());
        assert!(beta_cdf(0.5, 0.0, 1.0).is_err());
        assert!(beta_cdf(1.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn beta_quantile_boundaries_and_median() {
        assert_eq!(beta_quantile(0.0, 2.0, 3.0).unwrap(), 0.0);
        assert_eq!(beta_quantile(1.0, 2.0, 3.0).unwrap(), 1.0);
        assert!((beta_quantile(0.5, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn beta_quantile_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let p: f64 = rng.gen_range(0.01..0.99);
            let a: f64 = rng.gen_range(0.5..20.0);
            let b: f64 = rng.gen_range(0.5..20.0);
            let x = beta_quantile(p, a, b).unwrap();
            assert!((beta_cdf(x, a, b).unwrap() - p).abs() <= 1e-10, "p={p} a={a} b={b}");
        }
    }

    #[test]
    fn clopper_pearson_boundary_cases() {
        let ci = clopper_pearson(BinomialSample { k: 0, n: 10 }, 0.05).unwrap();
        assert_eq!(ci.lo, 0.0);
        assert!((ci.hi - (1.0 - 0.025_f64.powf(0.1))).abs() < 1e-10);
        assert!((ci.hi - 0.308_497_107_818_760_83).abs() < 1e-9);

        let ci = clopper_pearson(BinomialSample { k: 10, n: 10 }, 0.05).unwrap();
        assert_eq!(ci.hi, 1.0);
        assert!((ci.lo - (1.0 - 0.308_497_107_818_760_83)).abs() < 1e-9);
    }

    #[test]
    fn clopper_pearson_central_case() {
        let ci = clopper_pearson(BinomialSample { k: 5, n: 10 }, 0.05).unwrap();
        // Frozen independent bisection oracle values.
        assert!((ci.lo - 0.187_086_028_447_398_55).abs() < 1e-8);
        assert!((ci.hi - 0.812_913_971_552_601_5).abs() < 1e-8);
    }

    #[test]
    fn clopper_pearson_contains_point_estimate_and_nests() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..200u64);
            let k = rng.gen_range(0..=n);
            let wide = clopper_pearson(BinomialSample { k, n }, 0.01).unwrap();
            let narrow = clopper_pearson(BinomialSample { k, n }, 0.1).unwrap();
            let phat = k as f64 / n as f64;
            assert!(wide.lo <= phat && phat <= wide.hi);
            assert!(wide.lo <= narrow.lo && narrow.hi <= wide.hi);
        }
    }

    #[test]
    fn clopper_pearson_coverage_is_conservative() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for &p in &[0.1, 0.5, 0.9] {
            for &n in &[20u64, 100] {
                let mut covered = 0u32;
                const SIMS: u32 = 10_000;
                for _ in 0..SIMS {
                    let k = (0..n).filter(|_| rng.gen::<f64>() < p).count() as u64;
                    let ci = clopper_pearson(BinomialSample { k, n }, 0.05).unwrap();
                    if ci.lo <= p && p <= ci.hi {
                        covered += 1;
                    }
                }
                let rate = covered as f64 / SIMS as f64;
                assert!(rate >= 0.945, "coverage {rate} at p={p} n={n}");
            }
        }
    }

    #[test]
    fn normal_quantile_fixed_points() {
        assert!(normal_quantile(0.5).unwrap().abs() < 1e-9);
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-7);
        assert!((normal_quantile(0.025).unwrap() + 1.959_963_984_540_054).abs() < 1e-7);
        assert!(normal_quantile(0.0).is_err());
    }

    #[test]
    fn logistic_symmetric_data_fits_flat() {
        // Labels independent of x, exactly half positive: every x appears
        // once with each label, so the likelihood is symmetric in the slope.
        let xs: Vec<Vec<f64>> = (0..100).map(|i| vec![(i / 2) as f64]).collect();
        let zs: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let m = fit_logistic(&xs, &zs).unwrap();
        assert!(m.weights[0].abs() <= 1e-6, "w = {}", m.weights[0]);
        assert!(m.intercept.abs() <= 1e-3, "c = {}", m.intercept);
    }

    #[test]
    fn logistic_single_class_is_degenerate() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let zs = vec![true; 10];
        assert!(matches!(fit_logistic(&xs, &zs), Err(StatsError::DegenerateData(_))));
    }

    #[test]
    fn logistic_recovers_synthetic_detector() {
        // Truth p(x) = 1 / (1 + e^{0.1 (x - 35)}), i.e. slope -0.1, center 35.
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let mut xs = Vec::with_capacity(50_000);
        let mut zs = Vec::with_capacity(50_000);
        for _ in 0..50_000 {
            let x: f64 = rng.gen_range(0.0..70.0);
            let p = sigmoid(-0.1 * (x - 35.0));
            xs.push(vec![x]);
            zs.push(rng.gen::<f64>() < p);
        }
        let m = fit_logistic(&xs, &zs).unwrap();
        let k_hat = m.weights[0];
        let x0_hat = -m.intercept / k_hat;
        assert!((k_hat + 0.1).abs() <= 0.01, "k_hat = {k_hat}");
        assert!((x0_hat - 35.0).abs() <= 2.0, "x0_hat = {x0_hat}");
    }

    #[test]
    fn logistic_score_vanishes_at_optimum_and_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let d = rng.gen_range(1..=3);
            let xs: Vec<Vec<f64>> =
                (0..60).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let zs: Vec<bool> = xs.iter().map(|x| x[0] + rng.gen_range(-1.0..1.0) > 0.0).collect();
            if zs.iter().all(|&z| z) || zs.iter().all(|&z| !z) {
                continue;
            }
            let m = fit_logistic(&xs, &zs).unwrap();
            let score = logistic_score(&xs, &zs, &m.weights, m.intercept);
            for g in &score {
                assert!(g.abs() <= 1e-6, "score {g}");
            }
            // Central finite differences of the log-likelihood.
            let ll = |w: &[f64], c: f64| -> f64 {
                let mut acc = 0.0;
                for (x, &z) in xs.iter().zip(&zs) {
                    let eta = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c;
                    let y = if z { 1.0 } else { 0.0 };
                    acc += y * eta - (1.0 + eta.exp()).ln();
                }
                acc -= 0.5 * RIDGE * (w.iter().map(|v| v * v).sum::<f64>() + c * c);
                acc
            };
            let h = 1e-6;
            let at = |j: usize, delta: f64| -> f64 {
                let mut w = m.weights.clone();
                let mut c = m.intercept;
                if j < d {
                    w[j] += delta;
                } else {
                    c += delta;
                }
                ll(&w, c)
            };
            let probe = logistic_score(&xs, &zs, &m.weights, m.intercept);
            for j in 0..=d {
                let fd = (at(j, h) - at(j, -h)) / (2.0 * h);
                let denom = probe[j].abs().max(1e-3);
                assert!((fd - probe[j]).abs() / denom <= 1e-3, "fd {fd} vs {}", probe[j]);
            }
        }
    }

    #[test]
    fn range_over_box_matches_reference_interval() {
        // Slope -0.1, center 35 over [30, 40]: endpoints sigmoid(-0.5), sigmoid(0.5).
        let m = LogisticModel {
            weights: vec![-0.1],
            intercept: 3.5,
            fisher_covariance: vec![vec![0.0; 2]; 2],
        };
        let (lo, hi) = logistic_range_over_box(&m, &AxisBox::new(vec![30.0], vec![40.0])).unwrap();
        assert!((lo - sigmoid(-0.5)).abs() < 1e-12);
        assert!((hi - sigmoid(0.5)).abs() < 1e-12);
        assert!((hi - lo - 0.244_918_662_403_709_14).abs() < 1e-9);
    }

    #[test]
    fn range_over_box_flat_model() {
        let m = LogisticModel {
            weights: vec![0.0, 0.0],
            intercept: 0.3,
            fisher_covariance: vec![vec![0.0; 3]; 3],
        };
        let b = AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let (lo, hi) = logistic_range_over_box(&m, &b).unwrap();
        assert_eq!(lo, hi);
    }

    #[test]
    fn range_over_box_matches_corner_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let d = rng.gen_range(1..=6);
            let weights: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = LogisticModel {
                weights,
                intercept: rng.gen_range(-1.0..1.0),
                fisher_covariance: vec![vec![0.0; d + 1]; d + 1],
            };
            let lower: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..0.0)).collect();
            let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.1..3.0)).collect();
            let b = AxisBox::new(lower.clone(), upper.clone());
            let (lo, hi) = logistic_range_over_box(&m, &b).unwrap();
            let mut corner_lo = f64::INFINITY;
            let mut corner_hi = f64::NEG_INFINITY;
            for mask in 0..(1u32 << d) {
                let x: Vec<f64> = (0..d)
                    .map(|j| if mask >> j & 1 == 1 { upper[j] } else { lower[j] })
                    .collect();
                let p = m.predict(&x);
                corner_lo = corner_lo.min(p);
                corner_hi = corner_hi.max(p);
            }
            assert!((lo - corner_lo).abs() < 1e-14);
            assert!((hi - corner_hi).abs() < 1e-14);
        }
    }

    #[test]
    fn range_over_box_dimension_mismatch() {
        let m = LogisticModel {
            weights: vec![1.0],
            intercept: 0.0,
            fisher_covariance: vec![vec![0.0; 2]; 2],
        };
        let b = AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!(matches!(
            logistic_range_over_box(&m, &b),
            Err(StatsError::DimensionMismatch { .. })
        ));
    }
}
