//! Uncertainty quantification and replicate-level metrics: i.i.d. row
//! bootstrap with normal-approximation intervals, table summaries
//! (bias / sd / mse / coverage), and empirical normality diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::estimators::ShiftEstimate;

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 120;
/// Normal 97.5% quantile; all intervals are nominal 95%.
pub const CI_MULTIPLIER: f64 = 1.96;
/// Resample-failure fraction above which the bootstrap itself fails.
const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
pub struct BootstrapResult {
    /// Full-data point estimate; the interval is centered here.
    pub point: f64,
    pub boot_sd: f64,
    pub ci: (f64, f64),
    pub resamples: usize,
}

/// Row bootstrap: resample rows i.i.d. with replacement, re-estimate, and
/// report point +/- 1.96 x resample SD. The estimator receives a per-resample
/// seed for any internal randomness.
pub fn bootstrap_ci<F>(
    ds: &Dataset,
    point: f64,
    b: usize,
    rng: &mut (impl Rng + ?Sized),
    estimator: F,
) -> Result<BootstrapResult>
where
    F: Fn(&Dataset, u64) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::InvalidArgument("bootstrap needs B >= 2".into()));
    }
    let n = ds.len();
    let draws: Vec<(Vec<usize>, u64)> = (0..b)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            (idx, rng.gen())
        })
        .collect();
    let outcomes: Vec<Result<f64>> = draws
        .par_iter()
        .map(|(idx, seed)| estimator(&ds.subset(idx), *seed))
        .collect();
    let points: Vec<f64> = outcomes.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failed = b - points.len();
    if (failed as f64) > MAX_FAILURE_FRACTION * b as f64 {
        return Err(Error::BootstrapFailure { failed, total: b });
    }
    let m = points.len() as f64;
    let mean = points.iter().sum::<f64>() / m;
    let var = points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let boot_sd = var.sqrt();
    let half = CI_MULTIPLIER * boot_sd;
    Ok(BootstrapResult {
        point,
        boot_sd,
        ci: (point - half, point + half),
        resamples: b,
    })
}

/// Deterministic bootstrap given a seed (convenience over bootstrap_ci).
pub fn bootstrap_ci_seeded<F>(
    ds: &Dataset,
    point: f64,
    b: usize,
    seed: u64,
    estimator: F,
) -> Result<BootstrapResult>
where
    F: Fn(&Dataset, u64) -> Result<f64> + Sync,
{
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    bootstrap_ci(ds, point, b, &mut rng, estimator)
}

/// One summary row of a simulation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub n: usize,
    pub method: String,
    pub replicates: usize,
    pub bias: f64,
    pub sd: f64,
    pub mse: f64,
    pub coverage: Option<f64>,
    /// Trailing marker column: positivity violations, failure counts.
    pub status: Option<String>,
}

impl MetricsRow {
    pub const HEADER: &'static str = "scenario,n,method,replicates,bias,sd,mse,coverage,status";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.n,
            self.method,
            self.replicates,
            sci4(self.bias),
            sci4(self.sd),
            sci4(self.mse),
            self.coverage.map_or(String::new(), |c| format!("{c:.3}")),
            self.status.clone().unwrap_or_default()
        )
    }
}

/// Scientific notation with 4 significant digits.
pub fn sci4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3e}")
    } else {
        v.to_string()
    }
}

/// Collapse replicate estimates to table metrics against the truth.
pub fn summarize(
    scenario: &str,
    n: usize,
    method: &str,
    estimates: &[ShiftEstimate],
    truth: f64,
) -> Result<MetricsRow> {
    if estimates.len() < 2 {
        return Err(Error::InvalidArgument("summarize needs >= 2 estimates".into()));
    }
    let r = estimates.len() as f64;
    let mean = estimates.iter().map(|e| e.point).sum::<f64>() / r;
    let bias = mean - truth;
    let sd = (estimates.iter().map(|e| (e.point - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
    let mse = estimates.iter().map(|e| (e.point - truth).powi(2)).sum::<f64>() / r;
    let with_ci = estimates.iter().filter(|e| e.ci.is_some()).count();
    let coverage = if with_ci > 0 {
        let covered = estimates
            .iter()
            .filter_map(|e| e.ci)
            .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
            .count();
        Some(covered as f64 / with_ci as f64)
    } else {
        None
    };
    Ok(MetricsRow {
        scenario: scenario.to_string(),
        n,
        method: method.to_string(),
        replicates: estimates.len(),
        bias,
        sd,
        mse,
        coverage,
        status: None,
    })
}

/// Moment-based normality report for standardized replicate estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormalityReport {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Mean absolute deviation between standardized order statistics and
    /// normal quantiles.
    pub qq_deviation: f64,
    pub degenerate: bool,
}

impl NormalityReport {
    pub fn within(&self, skew_tol: f64, kurt_tol: f64) -> bool {
        !self.degenerate && self.skewness.abs() < skew_tol && self.excess_kurtosis.abs() < kurt_tol
    }
}

pub fn normality_diagnostics(points: &[f64]) -> Result<NormalityReport> {
    let n = points.len();
    if n < 100 {
        return Err(Error::InvalidArgument(
            "normality diagnostics need >= 100 estimates".into(),
        ));
    }
    let nf = n as f64;
    let mean = points.iter().sum::<f64>() / nf;
    let var = points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / nf;
    let sd = var.sqrt();
    let scale = points.iter().map(|p| p.abs()).fold(0.0, f64::max).max(1.0);
    if sd <= 1e-12 * scale {
        return Ok(NormalityReport {
            skewness: 0.0,
            excess_kurtosis: 0.0,
            qq_deviation: 0.0,
            degenerate: true,
        });
    }
    let mut z: Vec<f64> = points.iter().map(|p| (p - mean) / sd).collect();
    let skewness = z.iter().map(|v| v.powi(3)).sum::<f64>() / nf;
    let excess_kurtosis = z.iter().map(|v| v.powi(4)).sum::<f64>() / nf - 3.0;
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let qq_deviation = z
        .iter()
        .enumerate()
        .map(|(i, v)| (v - inverse_normal_cdf((i as f64 + 0.5) / nf)).abs())
        .sum::<f64>()
        / nf;
    Ok(NormalityReport {
        skewness,
        excess_kurtosis,
        qq_deviation,
        degenerate: false,
    })
}

/// Acklam's rational approximation to the standard normal quantile
/// (relative error below 1.15e-9).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inverse_normal_cdf(1.0 - p)
    }
}
