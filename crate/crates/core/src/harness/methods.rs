//! Method dispatch: maps config method names onto estimator calls, and
//! wraps them with the row bootstrap.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_dr_shift, estimate_flexible_shift, estimate_gsem, estimate_ols, estimate_plm,
    estimate_rsr, estimate_spatial_plus, estimate_svc, fit_nuisances, if_variance,
    spatial_crossfit, CrossfitConfig, DrOutcome, JointLearner, PlmSmoother, ShiftEstimate,
    SmootherSettings,
};
use crate::harness::config::{CrossfitSettings, MethodSpec};
use crate::inference::bootstrap_ci_seeded;
use crate::learners::exposure::ExposureConfig;
use crate::learners::gp::GP_EXACT_CAP;
use crate::learners::rbf::Penalty;

fn settings_for(spec: &MethodSpec) -> SmootherSettings {
    let mut s = SmootherSettings::default();
    if let Some(k) = spec.k_spatial {
        s.k_spatial = k;
    }
    s.k_joint = spec.k_joint;
    if let Some(l) = spec.fixed_primary_lambda {
        s.penalty = Penalty::Fixed(l);
    }
    s
}

fn exposure_for(spec: &MethodSpec) -> ExposureConfig {
    let mut e = ExposureConfig::default();
    if let Some(k) = spec.k_spatial {
        e.k = k;
    }
    if let Some(l) = spec.fixed_exposure_lambda {
        e.penalty = Penalty::Fixed(l);
    }
    e
}

/// Whether the method's intervals come from the bootstrap. GP-based methods
/// are excluded (their coverage cells stay blank).
pub fn supports_bootstrap(name: &str) -> bool {
    !matches!(name, "plm_gp" | "flex_gp")
}

/// Run one method once. GP methods above the exact-solve cap substitute the
/// radial-basis learner while keeping their label.
pub fn run_method(
    ds: &Dataset,
    spec: &MethodSpec,
    delta: f64,
    crossfit: &CrossfitSettings,
    seed: u64,
) -> Result<ShiftEstimate> {
    let settings = settings_for(spec);
    let n = ds.len();
    let mut est = match spec.name.as_str() {
        "ols" => estimate_ols(ds, delta)?,
        "rsr" => estimate_rsr(ds, delta)?,
        "plm_rbf" => estimate_plm(ds, delta, PlmSmoother::Rbf, &settings)?,
        "plm_gp" => {
            let smoother = if n > GP_EXACT_CAP {
                PlmSmoother::Rbf
            } else {
                PlmSmoother::Gp
            };
            estimate_plm(ds, delta, smoother, &settings)?
        }
        "gsem" => estimate_gsem(ds, delta, &settings)?,
        "spatial_plus" => estimate_spatial_plus(ds, delta, &settings)?,
        "svc" => estimate_svc(ds, delta, &settings)?,
        "flex_rbf" => estimate_flexible_shift(ds, delta, JointLearner::Rbf, &settings, seed)?,
        "flex_gp" => {
            let learner = if n > GP_EXACT_CAP {
                JointLearner::Rbf
            } else {
                JointLearner::Gp
            };
            estimate_flexible_shift(ds, delta, learner, &settings, seed)?
        }
        "flex_forest" => estimate_flexible_shift(ds, delta, JointLearner::Forest, &settings, seed)?,
        "dml_rbf" | "dml_forest" => {
            let outcome = if spec.name == "dml_rbf" {
                DrOutcome::Rbf
            } else {
                DrOutcome::Forest
            };
            let exposure = exposure_for(spec);
            let nuis = fit_nuisances(ds, delta, outcome, &settings, &exposure, seed)?;
            let mut est = estimate_dr_shift(ds, delta, &nuis)?;
            let ybar = ds.y.iter().sum::<f64>() / n as f64;
            est.se = Some(if_variance(ds, delta, &nuis, est.point + ybar).sqrt());
            est
        }
        "dml_crossfit" => {
            let config = CrossfitConfig {
                q: crossfit.q,
                r: crossfit.r,
                folds: crossfit.folds,
                size_weighted: crossfit.size_weighted,
                outcome: DrOutcome::Rbf,
                settings,
                exposure: exposure_for(spec),
            };
            let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5bd1e995);
            spatial_crossfit(ds, delta, &config, seed, &mut rng)?
        }
        other => return Err(Error::UnknownMethod(other.to_string())),
    };
    est.method = spec.name.clone();
    Ok(est)
}

/// Pin smoothing penalties chosen on the full data so bootstrap refits skip
/// penalty re-selection (the selection is stable under resampling and
/// dominates refit cost).
fn pinned_for_bootstrap(spec: &MethodSpec, full: &ShiftEstimate) -> MethodSpec {
    let mut pinned = spec.clone();
    let lambdas = &full.diagnostics.lambdas;
    match spec.name.as_str() {
        "plm_rbf" | "svc" | "flex_rbf" => {
            pinned.fixed_primary_lambda = lambdas.first().copied();
        }
        "dml_rbf" => {
            pinned.fixed_primary_lambda = lambdas.first().copied();
            pinned.fixed_exposure_lambda = lambdas.get(1).copied();
        }
        "dml_forest" | "dml_crossfit" => {
            pinned.fixed_exposure_lambda = lambdas.first().copied();
        }
        _ => {}
    }
    pinned
}

/// Full-data estimate plus bootstrap interval when requested and supported.
pub fn run_method_with_bootstrap(
    ds: &Dataset,
    spec: &MethodSpec,
    delta: f64,
    crossfit: &CrossfitSettings,
    resamples: usize,
    seed: u64,
) -> Result<ShiftEstimate> {
    let mut full = run_method(ds, spec, delta, crossfit, seed)?;
    if !spec.bootstrap || !supports_bootstrap(&spec.name) {
        return Ok(full);
    }
    let pinned = pinned_for_bootstrap(spec, &full);
    let boot = bootstrap_ci_seeded(ds, full.point, resamples, seed ^ 0x9e3779b9, |d, s| {
        run_method(d, &pinned, delta, crossfit, s).map(|e| e.point)
    })?;
    full.se = Some(boot.boot_sd);
    full.ci = Some(boot.ci);
    Ok(full)
}
