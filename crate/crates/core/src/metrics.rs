//! Value-tracking metrics, crash and boom detectors, and the tracking-error
//! estimator built from a panel of valuations.
//!
//! Tracking error is measured in Blacks: `tau = |log2 p - log2 u|`. One
//! deciblack is a tenth of a Black, roughly a 7% price deviation.

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from_seed, task_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingError {
    pub tau: f64,
}

impl TrackingError {
    pub fn deciblacks(&self) -> f64 {
        10.0 * self.tau
    }
}

pub fn tau(p: f64, u: f64) -> Result<f64> {
    if !(p > 0.0 && u > 0.0) || !p.is_finite() || !u.is_finite() {
        return Err(Error::Domain(format!("tau needs positive prices, got p={p}, u={u}")));
    }
    Ok((p.log2() - u.log2()).abs())
}

pub fn tracking_error(p: f64, u: f64) -> Result<TrackingError> {
    tau(p, u).map(|tau| TrackingError { tau })
}

/// True iff every price tracks `u` within `tol` Blacks.
pub fn is_tracking(series: &[f64], u: f64, tol: f64) -> Result<bool> {
    if series.is_empty() {
        return Err(Error::Domain("empty price series".into()));
    }
    for &p in series {
        if tau(p, u)? > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `max(0, 1 - min_t p_t / p_0)`.
pub fn max_relative_drop(series: &[f64]) -> f64 {
    let Some(&p0) = series.first() else {
        return 0.0;
    };
    series
        .iter()
        .map(|&p| 1.0 - p / p0)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CrashPredicate {
    /// Price falls below an absolute level.
    DropBelow(f64),
    /// Price falls by at least this fraction of the starting price.
    RelativeDrop(f64),
    /// Price falls by at least this many deciblacks from the start.
    DeciblackDrop(f64),
}

impl CrashPredicate {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CrashPredicate::DropBelow(level) if !(level > 0.0) => {
                Err(Error::Config(format!("crash level must be > 0, got {level}")))
            }
            CrashPredicate::RelativeDrop(f) if !(f > 0.0 && f < 1.0) => {
                Err(Error::Config(format!("relative drop must lie in (0, 1), got {f}")))
            }
            CrashPredicate::DeciblackDrop(n) if !(n > 0.0) => {
                Err(Error::Config(format!("deciblack drop must be > 0, got {n}")))
            }
            _ => Ok(()),
        }
    }

    /// Relative drop (`1 - p/p0`) at which the predicate fires, when it is relative.
    fn drop_threshold(&self) -> Option<f64> {
        match *self {
            CrashPredicate::DropBelow(_) => None,
            CrashPredicate::RelativeDrop(f) => Some(f),
            CrashPredicate::DeciblackDrop(n) => Some(1.0 - 2f64.powf(-n / 10.0)),
        }
    }
}

/// First index at which the crash predicate fires.
pub fn detect_crash(series: &[f64], predicate: &CrashPredicate) -> Option<usize> {
    let p0 = *series.first()?;
    match *predicate {
        CrashPredicate::DropBelow(level) => series.iter().position(|&p| p < level),
        _ => {
            let threshold = predicate.drop_threshold()?;
            series.iter().position(|&p| 1.0 - p / p0 >= threshold)
        }
    }
}

/// Mirror of [`detect_crash`]: the price rises by the reciprocal factor.
pub fn detect_boom(series: &[f64], predicate: &CrashPredicate) -> Option<usize> {
    let p0 = *series.first()?;
    match *predicate {
        CrashPredicate::DropBelow(level) => series.iter().position(|&p| p > 1.0 / level),
        CrashPredicate::RelativeDrop(f) => series.iter().position(|&p| p / p0 >= 1.0 / (1.0 - f)),
        CrashPredicate::DeciblackDrop(n) => {
            series.iter().position(|&p| p / p0 >= 2f64.powf(n / 10.0))
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Tracking error against the unweighted mean of the valuations.
pub fn tau_hat(valuations: &[f64], p: f64) -> Result<f64> {
    if valuations.is_empty() {
        return Err(Error::Domain("no valuations".into()));
    }
    if valuations.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("valuations must be positive".into()));
    }
    tau(p, mean(valuations))
}

/// Inverse-variance weighted variant; `variances[i]` is the uncertainty of valuation `i`.
pub fn tau_hat_weighted(valuations: &[f64], variances: &[f64], p: f64) -> Result<f64> {
    if valuations.is_empty() || valuations.len() != variances.len() {
        return Err(Error::Domain("valuations and variances must be non-empty and aligned".into()));
    }
    if variances.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("variances must be positive".into()));
    }
    let (num, den) = valuations
        .iter()
        .zip(variances)
        .fold((0.0, 0.0), |(n, d), (&u, &v)| (n + u / v, d + 1.0 / v));
    tau(p, num / den)
}

/// Median variant.
pub fn tau_hat_median(valuations: &[f64], p: f64) -> Result<f64> {
    if valuations.is_empty() {
        return Err(Error::Domain("no valuations".into()));
    }
    let mut v = valuations.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let med = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    tau(p, med)
}

/// Delta-method standard deviation of `tau_hat`: `sigma / (u sqrt(n) ln 2)`.
pub fn tau_hat_predicted_std(sigma: f64, u: f64, p: f64, n: usize) -> Result<f64> {
    if p == u {
        return Err(Error::Domain("p = u: |log(p/u)| is not differentiable there".into()));
    }
    if n == 0 || !(u > 0.0) || !(p > 0.0) || !(sigma >= 0.0) {
        return Err(Error::Domain(format!("bad arguments sigma={sigma}, u={u}, p={p}, n={n}")));
    }
    Ok(sigma / (u * (n as f64).sqrt() * std::f64::consts::LN_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ValuationDistribution {
    Gamma { shape: f64, rate: f64 },
}

impl ValuationDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            ValuationDistribution::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            ValuationDistribution::Gamma { shape, rate } => shape.sqrt() / rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub n: usize,
    pub reps: usize,
    pub p: f64,
    pub tau_true: f64,
    pub tau_hat_mean: f64,
    /// `mean(tau_hat) - tau`.
    pub raw_bias: f64,
    /// Bias estimated with the linear delta-method term as a control
    /// variate; same expectation as `raw_bias`, much lower variance.
    pub bias: f64,
    pub bias_se: f64,
    pub empirical_std: f64,
    pub predicted_std: f64,
    pub skewness: f64,
    pub u_hat_mean: f64,
    pub u_hat_mean_se: f64,
    pub u_hat_var: f64,
    pub u_hat_var_expected: f64,
    pub u_hat_var_se: f64,
    /// Mean and variance of the averaged valuations agree with
    /// `Gamma(n shape, n rate)` within three Monte-Carlo standard errors.
    pub moments_consistent: bool,
}

/// Monte-Carlo study of `tau_hat` over `reps` independent panels of `n` valuations.
///
/// Each replicate draws from its own stream seeded by `(seed, rep)`, and the
/// reduction runs in replicate order, so the report is independent of the
/// thread count.
pub fn estimator_mc(
    dist: ValuationDistribution,
    p: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    if reps < 1000 || n < 1 {
        return Err(Error::Contract(format!(
            "need reps >= 1000 and n >= 1, got reps={reps}, n={n}"
        )));
    }
    let ValuationDistribution::Gamma { shape, rate } = dist;
    let gamma = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let u = dist.mean();
    let sigma = dist.sd();
    let tau_true = tau(p, u)?;
    let predicted_std = tau_hat_predicted_std(sigma, u, p, n)?;

    let u_hats: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(task_seed(seed, &[r as u64]));
            (0..n).map(|_| gamma.sample(&mut rng)).sum::<f64>() / n as f64
        })
        .collect();
    let tau_hats: Vec<f64> = u_hats.iter().map(|&uh| tau(p, uh)).collect::<Result<_>>()?;

    let rf = reps as f64;
    let tau_hat_mean = mean(&tau_hats);
    let empirical_std = sample_sd(&tau_hats);
    let m3 = tau_hats.iter().map(|t| (t - tau_hat_mean).powi(3)).sum::<f64>() / rf;
    let m2 = tau_hats.iter().map(|t| (t - tau_hat_mean).powi(2)).sum::<f64>() / rf;
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };

    // d tau / d u_hat at u_hat = u.
    let slope = -(p / u).ln().signum() / (u * std::f64::consts::LN_2);
    let corrected: Vec<f64> = tau_hats
        .iter()
        .zip(&u_hats)
        .map(|(&t, &uh)| t - tau_true - slope * (uh - u))
        .collect();
    let bias = mean(&corrected);
    let bias_se = sample_sd(&corrected) / rf.sqrt();

    let u_hat_mean = mean(&u_hats);
    let u_hat_var = sample_sd(&u_hats).powi(2);
    let u_hat_var_expected = shape / (n as f64 * rate * rate);
    let u_hat_mean_se = u_hat_var_expected.sqrt() / rf.sqrt();
    // Var of the sample variance for Gamma(n shape, n rate): excess kurtosis 6/(n shape).
    let u_hat_var_se = u_hat_var_expected * ((2.0 + 6.0 / (n as f64 * shape)) / rf).sqrt();
    let moments_consistent = (u_hat_mean - u).abs() <= 3.0 * u_hat_mean_se
        && (u_hat_var - u_hat_var_expected).abs() <= 3.0 * u_hat_var_se;

    Ok(EstimatorReport {
        n,
        reps,
        p,
        tau_true,
        tau_hat_mean,
        raw_bias: tau_hat_mean - tau_true,
        bias,
        bias_se,
        empirical_std,
        predicted_std,
        skewness,
        u_hat_mean,
        u_hat_mean_se,
        u_hat_var,
        u_hat_var_expected,
        u_hat_var_se,
        moments_consistent,
    })
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.25;
pub const HISTOGRAM_HALF_RANGE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin centres in standard-deviation units.
    pub centers: Vec<f64>,
    pub frequencies: Vec<f64>,
}

/// Time spent by the price at each level, measured in standard deviations of
/// the valuations away from their mean. Values beyond the range land in the
/// end bins.
pub fn price_level_histogram(series: &[f64], valuations: &[f64]) -> Result<Histogram> {
    if valuations.len() < 2 {
        return Err(Error::Domain("need at least two valuations".into()));
    }
    if series.is_empty() {
        return Err(Error::Domain("empty price series".into()));
    }
    let m = mean(valuations);
    let sd = sample_sd(valuations);
    if !(sd > 0.0) {
        return Err(Error::Domain("valuations have zero spread".into()));
    }
    let half_bins = (HISTOGRAM_HALF_RANGE / HISTOGRAM_BIN_WIDTH).round() as i64;
    let nbins = (2 * half_bins + 1) as usize;
    let centers = (-half_bins..=half_bins)
        .map(|k| k as f64 * HISTOGRAM_BIN_WIDTH)
        .collect();
    let mut counts = vec![0usize; nbins];
    for &p in series {
        let z = (p - m) / sd;
        let k = (z / HISTOGRAM_BIN_WIDTH).round().clamp(-half_bins as f64, half_bins as f64) as i64;
        counts[(k + half_bins) as usize] += 1;
    }
    let total = series.len() as f64;
    Ok(Histogram {
        centers,
        frequencies: counts.into_iter().map(|c| c as f64 / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_examples() {
        assert_eq!(tau(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(tau(2.0, 1.0).unwrap(), 1.0);
        let t = tracking_error(1.0718, 1.0).unwrap();
        assert!((t.deciblacks() - 1.0).abs() < 1e-3, "{}", t.deciblacks());
        assert!(tau(0.0, 1.0).is_err());
        assert!(tau(1.0, -1.0).is_err());
    }

    #[test]
    fn deciblack_composition() {
        // value falls 3 dB, then price sits a further 2 dB below value
        let u0 = 1.0;
        let u1 = u0 * 2f64.powf(-0.3);
        let p = u1 * 2f64.powf(-0.2);
        assert!((10.0 * tau(p, u0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn tracking_checks() {
        assert!(is_tracking(&[1.0; 5], 1.0, 0.0).unwrap());
        assert!(!is_tracking(&[1.0, 2.0], 1.0, 0.9).unwrap());
        assert!(is_tracking(&[1.0, 2.0], 1.0, 1.0).unwrap());
        assert!(is_tracking(&[], 1.0, 1.0).is_err());
    }

    #[test]
    fn relative_drop_examples() {
        assert!((max_relative_drop(&[1.0, 1.2, 0.8]) - 0.2).abs() < 1e-12);
        assert_eq!(max_relative_drop(&[1.0, 1.1, 1.5]), 0.0);
        assert!((max_relative_drop(&[1.0, 0.01]) - 0.99).abs() < 1e-12);
    }

    #[test]
    fn crash_detection() {
        assert_eq!(detect_crash(&[1.0, 0.5, 0.005], &CrashPredicate::DropBelow(0.01)), Some(2));
        let dd = CrashPredicate::DeciblackDrop(5.0);
        let half_black = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(detect_crash(&[1.0, half_black + 1e-5], &dd), None);
        assert_eq!(detect_crash(&[1.0, half_black - 1e-5], &dd), Some(1));
        assert_eq!(detect_crash(&[1.0, 1.0, 0.99], &dd), None);
        assert_eq!(detect_crash(&[1.0, 0.75, 0.69], &CrashPredicate::RelativeDrop(0.3)), Some(2));
    }

    #[test]
    fn boom_detection() {
        let rd = CrashPredicate::RelativeDrop(0.3);
        assert_eq!(detect_boom(&[1.0, 1.3, 1.43], &rd), Some(2));
        assert_eq!(detect_boom(&[1.0, 50.0, 101.0], &CrashPredicate::DropBelow(0.01)), Some(2));
        assert_eq!(detect_boom(&[1.0, 1.42], &CrashPredicate::DeciblackDrop(5.0)), Some(1));
    }

    #[test]
    fn tau_hat_examples() {
        assert_eq!(tau_hat(&[1.0, 1.0, 1.0], 2.0).unwrap(), 1.0);
        assert_eq!(tau_hat(&[0.5, 1.5], 1.0).unwrap(), 0.0);
        assert!(tau_hat(&[], 1.0).is_err());
        assert_eq!(tau_hat_median(&[0.5, 1.0, 9.0], 2.0).unwrap(), 1.0);
        assert!((tau_hat_weighted(&[1.0, 3.0], &[1.0, 1.0], 4.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tau_hat_gamma_panel_converges() {
        let mut rng = rng_from_seed(5);
        let g = Gamma::new(8.0, 1.0 / 8.0).unwrap();
        let vals: Vec<f64> = (0..10_000).map(|_| g.sample(&mut rng)).collect();
        let t = tau_hat(&vals, 1.3).unwrap();
        assert!((t - 1.3f64.log2()).abs() <= 0.01, "{t}");
    }

    #[test]
    fn predicted_std_examples() {
        let s = tau_hat_predicted_std(0.35355, 1.0, 1.3, 100).unwrap();
        assert!((s - 0.05101).abs() < 1e-5, "{s}");
        let s400 = tau_hat_predicted_std(0.35355, 1.0, 1.3, 400).unwrap();
        assert!((s / s400 - 2.0).abs() < 1e-12);
        assert!(tau_hat_predicted_std(0.35355, 1.0, 1.3, 1 << 40).unwrap() < 1e-6);
        assert!(tau_hat_predicted_std(0.3, 1.0, 1.0, 10).is_err());
    }

    #[test]
    fn histogram_constant_at_mean() {
        let h = price_level_histogram(&[1.0; 20], &[0.5, 1.5]).unwrap();
        let zero = h.centers.iter().position(|&c| c == 0.0).unwrap();
        assert_eq!(h.frequencies[zero], 1.0);
        assert!((h.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_shifted_series() {
        // sd of {0.5, 1.5} is sqrt(0.5); p = 1 - sqrt(0.5) sits at -1 sd
        let p = 1.0 - 0.5f64.sqrt();
        let h = price_level_histogram(&[p, p, 1.0, 100.0], &[0.5, 1.5]).unwrap();
        let at = |c: f64| h.frequencies[h.centers.iter().position(|&x| (x - c).abs() < 1e-12).unwrap()];
        assert_eq!(at(-1.0), 0.5);
        assert_eq!(at(0.0), 0.25);
        assert_eq!(at(6.0), 0.25);
        assert!(price_level_histogram(&[1.0], &[1.0, 1.0]).is_err());
        assert!(price_level_histogram(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn estimator_mean_is_unbiased() {
        let r = estimator_mc(ValuationDistribution::Gamma { shape: 8.0, rate: 8.0 }, 1.3, 100, 2000, 3).unwrap();
        assert!((r.u_hat_mean - 1.0).abs() <= 3.0 * r.u_hat_mean_se);
        assert!((r.predicted_std - 0.05101).abs() < 1e-4);
    }
}
