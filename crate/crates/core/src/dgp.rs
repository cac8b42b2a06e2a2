//! Structural data-generating processes for the simulation scenarios, with
//! retained exogenous noise so exact counterfactuals and Monte Carlo oracles
//! for the true shift effect are available.
//!
//! All scenarios draw, in order: locations, the latent confounder, the
//! exposure, then the outcome. The second argument of every `N(mu, v)` in the
//! scenario definitions is treated as a standard deviation.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::spatial::{moving_average_field, sample_locations, LocationSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Linear,
    Simple,
    StructHet,
    Nonlinear,
    RandomHet,
    Noisy,
    LessNoisy,
    SmoothExposure,
    RandomSlope,
    ExpIllustration,
}

impl Scenario {
    pub const ALL: [Scenario; 10] = [
        Scenario::Linear,
        Scenario::Simple,
        Scenario::StructHet,
        Scenario::Nonlinear,
        Scenario::RandomHet,
        Scenario::Noisy,
        Scenario::LessNoisy,
        Scenario::SmoothExposure,
        Scenario::RandomSlope,
        Scenario::ExpIllustration,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Linear => "linear",
            Scenario::Simple => "simple",
            Scenario::StructHet => "struct_het",
            Scenario::Nonlinear => "nonlinear",
            Scenario::RandomHet => "random_het",
            Scenario::Noisy => "noisy",
            Scenario::LessNoisy => "less_noisy",
            Scenario::SmoothExposure => "smooth_exposure",
            Scenario::RandomSlope => "random_slope",
            Scenario::ExpIllustration => "exp_illustration",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

/// Optional locally covariant noise added to the outcome on top of the
/// scenario's i.i.d. noise.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpatialNoise {
    pub kernel_radius: f64,
    pub sd: f64,
}

/// A named structural DGP plus its tunable parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    /// Overrides the confounder noise SD in the noisy / less_noisy scenarios
    /// (defaults: 1.0 and 0.1).
    pub confounder_noise_sd: Option<f64>,
    /// Extra locally covariant outcome noise, off by default.
    pub spatial_noise: Option<SpatialNoise>,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario) -> Self {
        ScenarioSpec {
            scenario,
            confounder_noise_sd: None,
            spatial_noise: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sd) = self.confounder_noise_sd {
            if sd < 0.0 || !sd.is_finite() {
                return Err(Error::InvalidArgument(
                    "confounder_noise_sd must be finite and nonnegative".into(),
                ));
            }
        }
        if let Some(sn) = self.spatial_noise {
            if sn.kernel_radius <= 0.0 || sn.sd < 0.0 {
                return Err(Error::InvalidArgument(
                    "spatial noise requires kernel_radius > 0 and sd >= 0".into(),
                ));
            }
        }
        Ok(())
    }

    fn confounder_sd(&self) -> f64 {
        self.confounder_noise_sd.unwrap_or(match self.scenario {
            Scenario::Noisy => 1.0,
            Scenario::LessNoisy => 0.1,
            _ => 0.0,
        })
    }
}

/// Exogenous draws retained so counterfactual outcomes can be evaluated with
/// the noise held fixed.
#[derive(Debug, Clone)]
pub struct RetainedNoise {
    /// Total additive outcome noise (i.i.d. plus any spatial component).
    pub outcome: Vec<f64>,
    /// Per-unit random slope `d` in the random_het scenario.
    pub slope: Option<Vec<f64>>,
}

/// The unit of all estimation: locations plus exposure and outcome vectors,
/// with the latent confounder and retained noise available on synthetic data.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub locations: LocationSet,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Option<Vec<f64>>,
    /// Optional covariate matrix, n x p, entering designs linearly.
    pub covariates: Option<Array2<f64>>,
    pub noise: Option<RetainedNoise>,
    pub scenario: Option<Scenario>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Row subset (locations, x, y, u, covariates; retained noise dropped).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            locations: self.locations.subset(idx),
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            u: self
                .u
                .as_ref()
                .map(|u| idx.iter().map(|&i| u[i]).collect()),
            covariates: self.covariates.as_ref().map(|c| {
                let rows: Vec<_> = idx.iter().map(|&i| c.row(i).to_owned()).collect();
                let mut out = Array2::zeros((idx.len(), c.ncols()));
                for (j, r) in rows.iter().enumerate() {
                    out.row_mut(j).assign(r);
                }
                out
            }),
            noise: None,
            scenario: self.scenario,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMethod {
    Analytic,
    MonteCarlo,
}

/// The target of every estimator: the true average effect of shifting the
/// exposure by `delta`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrueEffect {
    pub delta: f64,
    pub value: f64,
    pub method: EffectMethod,
    pub mc_se: Option<f64>,
}

fn latent_confounder<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    sa: f64,
    sb: f64,
    rng: &mut R,
) -> f64 {
    let smooth = match spec.scenario {
        Scenario::Linear => sa + sb,
        _ => (2.0 * std::f64::consts::PI * sa * sb).sin() + sa + sb,
    };
    let sd = spec.confounder_sd();
    if sd > 0.0 {
        smooth + sd * rng.sample::<f64, _>(StandardNormal)
    } else {
        smooth
    }
}

fn exposure<R: Rng + ?Sized>(spec: &ScenarioSpec, u: f64, sa: f64, sb: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    match spec.scenario {
        Scenario::Linear => u + 5.0 * z,
        Scenario::Simple | Scenario::Nonlinear | Scenario::Noisy | Scenario::LessNoisy => {
            u.powi(3) + 5.0 * z
        }
        Scenario::StructHet | Scenario::RandomHet => u.powi(3) + 5.0 * (u / 2.0).exp() * z,
        Scenario::SmoothExposure => {
            u.powi(3) + (2.0 * std::f64::consts::PI * sa * sb).cos()
        }
        Scenario::RandomSlope | Scenario::ExpIllustration => {
            unreachable!("handled by scenario-specific generation")
        }
    }
}

/// Structural conditional mean of the outcome given exposure, confounder, and
/// (for random_het) the unit's slope noise.
pub fn outcome_mean(scenario: Scenario, x: f64, u: f64, slope_noise: f64) -> f64 {
    match scenario {
        Scenario::Linear | Scenario::Simple | Scenario::SmoothExposure => 3.0 * u + x,
        Scenario::StructHet => 3.0 * u + (1.0 + u) * x,
        Scenario::Nonlinear => 3.0 * u + x + x * x,
        Scenario::RandomHet => u + (1.0 + slope_noise) * x,
        Scenario::Noisy | Scenario::LessNoisy => 5.0 * u + x,
        Scenario::RandomSlope => x + u,
        Scenario::ExpIllustration => x.exp(),
    }
}

/// Draw a dataset of size `n` from the scenario's structural equations.
pub fn generate<R: Rng + ?Sized>(spec: &ScenarioSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    spec.validate()?;
    let locations = sample_locations(n, rng)?;

    let (u, x, slope): (Vec<f64>, Vec<f64>, Option<Vec<f64>>) = match spec.scenario {
        Scenario::RandomSlope => {
            // one correlation per replicate; (X, U) standard bivariate normal
            let r: f64 = rng.gen_range(-1.0..1.0);
            let mut u = Vec::with_capacity(n);
            let mut x = Vec::with_capacity(n);
            for _ in 0..n {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let xv = z1;
                let uv = r * z1 + (1.0 - r * r).sqrt() * z2;
                x.push(xv);
                u.push(uv);
            }
            (u, x, None)
        }
        Scenario::ExpIllustration => {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
            (vec![0.0; n], x, None)
        }
        Scenario::RandomHet => {
            let mut u = Vec::with_capacity(n);
            let mut x = Vec::with_capacity(n);
            let mut d = Vec::with_capacity(n);
            for p in locations.points() {
                let uv = latent_confounder(spec, p.x, p.y, rng);
                let xv = exposure(spec, uv, p.x, p.y, rng);
                u.push(uv);
                x.push(xv);
                d.push(rng.sample::<f64, _>(StandardNormal));
            }
            (u, x, Some(d))
        }
        _ => {
            let mut u = Vec::with_capacity(n);
            let mut x = Vec::with_capacity(n);
            for p in locations.points() {
                let uv = latent_confounder(spec, p.x, p.y, rng);
                let xv = exposure(spec, uv, p.x, p.y, rng);
                u.push(uv);
                x.push(xv);
            }
            (u, x, None)
        }
    };

    let mut eps: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    if let Some(sn) = spec.spatial_noise {
        let field = moving_average_field(&locations, sn.kernel_radius, sn.sd, rng)?;
        for (e, f) in eps.iter_mut().zip(field.values.iter()) {
            *e += f;
        }
    }

    let y: Vec<f64> = (0..n)
        .map(|i| {
            let d = slope.as_ref().map_or(0.0, |d| d[i]);
            outcome_mean(spec.scenario, x[i], u[i], d) + eps[i]
        })
        .collect();

    Ok(Dataset {
        locations,
        x,
        y,
        u: Some(u),
        covariates: None,
        noise: Some(RetainedNoise {
            outcome: eps,
            slope,
        }),
        scenario: Some(spec.scenario),
    })
}

/// Evaluate the structural outcome equations at new exposures with the
/// retained exogenous noise held fixed. Consistency: at the observed
/// exposures this reproduces the observed outcomes exactly.
pub fn counterfactual_outcome(
    spec: &ScenarioSpec,
    dataset: &Dataset,
    x_new: &[f64],
) -> Result<Vec<f64>> {
    let noise = dataset.noise.as_ref().ok_or(Error::UnsupportedDataset)?;
    let u = dataset.u.as_ref().ok_or(Error::UnsupportedDataset)?;
    if x_new.len() != dataset.len() {
        return Err(Error::InvalidArgument(
            "x_new length must match dataset".into(),
        ));
    }
    Ok((0..dataset.len())
        .map(|i| {
            let d = noise.slope.as_ref().map_or(0.0, |d| d[i]);
            outcome_mean(spec.scenario, x_new[i], u[i], d) + noise.outcome[i]
        })
        .collect())
}

/// Minimum oracle sample size accepted for Monte Carlo truth evaluation.
pub const MIN_ORACLE_N: usize = 100_000;

/// Default Monte Carlo oracle size; keeps the MC standard error on the
/// non-linear truth below 0.01.
pub const DEFAULT_ORACLE_N: usize = 1_000_000;

fn homogeneous_linear_slope(scenario: Scenario) -> Option<f64> {
    match scenario {
        Scenario::Linear
        | Scenario::Simple
        | Scenario::Noisy
        | Scenario::LessNoisy
        | Scenario::SmoothExposure
        | Scenario::RandomSlope => Some(1.0),
        _ => None,
    }
}

/// True shift effect Delta = E[Y(X + delta) - Y(X)], analytic when the
/// outcome is linear in the exposure with a homogeneous unit slope, Monte
/// Carlo otherwise.
pub fn true_shift_effect<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    delta: f64,
    oracle_n: usize,
    rng: &mut R,
) -> Result<TrueEffect> {
    spec.validate()?;
    if let Some(b) = homogeneous_linear_slope(spec.scenario) {
        return Ok(TrueEffect {
            delta,
            value: b * delta,
            method: EffectMethod::Analytic,
            mc_se: None,
        });
    }
    if oracle_n < MIN_ORACLE_N {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo oracle requires oracle_n >= {MIN_ORACLE_N}"
        )));
    }
    // Locations and noise cancel in the difference, so draw (U, X, d) directly.
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let chunk = 100_000usize;
    let mut remaining = oracle_n;
    while remaining > 0 {
        let m = remaining.min(chunk);
        let ds = generate(spec, m, rng)?;
        let shifted: Vec<f64> = ds.x.iter().map(|&x| x + delta).collect();
        let y1 = counterfactual_outcome(spec, &ds, &shifted)?;
        for i in 0..m {
            let diff = y1[i] - ds.y[i];
            sum += diff;
            sum_sq += diff * diff;
        }
        remaining -= m;
    }
    let nf = oracle_n as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0);
    Ok(TrueEffect {
        delta,
        value: mean,
        method: EffectMethod::MonteCarlo,
        mc_se: Some((var / nf).sqrt()),
    })
}

/// Average derivative E[dE[Y]/dX] for the exponential illustration scenario.
pub fn average_derivative_exp_illustration() -> f64 {
    // E[exp(X)] with X ~ Unif(0, 5)
    (5f64.exp() - 1.0) / 5.0
}

/// Population OLS slope of Y on X for the exponential illustration scenario.
pub fn ols_slope_exp_illustration<R: Rng + ?Sized>(oracle_n: usize, rng: &mut R) -> Result<f64> {
    if oracle_n < MIN_ORACLE_N {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo oracle requires oracle_n >= {MIN_ORACLE_N}"
        )));
    }
    let spec = ScenarioSpec::new(Scenario::ExpIllustration);
    let ds = generate(&spec, oracle_n, rng)?;
    let n = oracle_n as f64;
    let mx = ds.x.iter().sum::<f64>() / n;
    let my = ds.y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..oracle_n {
        let dx = ds.x[i] - mx;
        sxy += dx * (ds.y[i] - my);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}
