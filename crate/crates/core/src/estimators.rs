//! Effect estimators for the shift intervention Delta = E[Y(X + delta) - Y(X)]:
//! baseline spatial regressions, flexible outcome-model estimators, the doubly
//! robust estimator (estimating-equation and plug-in forms), and spatial
//! cross-fitting.

use ndarray::{Array1, Array2};
use ndarray_linalg::SolveH;
use rand::Rng;

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::learners::exposure::{
    fit_exposure_model, locations_design, DensityRatio, ExposureConfig, ShiftWeight,
};
use crate::learners::gp::fit_gp_plm;
use crate::learners::rbf::{solve_penalized, Penalty, RadialBasis};
use crate::learners::{
    fit_forest_joint, fit_gp_joint, fit_rbf_joint, joint_basis_size, OutcomeModel,
};
use crate::spatial::spatial_block_split;

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    /// Estimating-equation coefficient on the density-ratio covariate.
    pub gamma: Option<f64>,
    /// Effective sample size of the observed-exposure weights.
    pub weight_ess: Option<f64>,
    /// Shifted exposures X_i + delta outside the observed exposure range.
    pub extrapolations: usize,
    /// Density-ratio evaluations that hit a clip bound.
    pub clipped_weights: usize,
    /// Every observed-exposure weight sat at a clip bound.
    pub weight_degeneracy: bool,
    /// Smoothing penalties selected during the fit, in fit order.
    pub lambdas: Vec<f64>,
    /// Per-fold minimum distance between fit and eval sets (cross-fitting).
    pub fold_min_cross_distance: Vec<f64>,
    /// Cross-fit folds that failed and were dropped from the average.
    pub failed_folds: usize,
}

#[derive(Debug, Clone)]
pub struct ShiftEstimate {
    pub delta: f64,
    pub point: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub method: String,
    pub diagnostics: Diagnostics,
}

impl ShiftEstimate {
    fn new(method: &str, delta: f64, point: f64) -> Result<Self> {
        if !point.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "{method}: non-finite point estimate"
            )));
        }
        Ok(ShiftEstimate {
            delta,
            point,
            se: None,
            ci: None,
            method: method.to_string(),
            diagnostics: Diagnostics::default(),
        })
    }
}

/// Smoother settings shared by the basis-expansion estimators.
#[derive(Debug, Clone, Copy)]
pub struct SmootherSettings {
    /// Basis size for 2-D spatial smooths.
    pub k_spatial: usize,
    /// Basis size for joint (x, s) smooths; None selects by sample size.
    pub k_joint: Option<usize>,
    pub penalty: Penalty,
}

impl Default for SmootherSettings {
    fn default() -> Self {
        SmootherSettings {
            k_spatial: 200,
            k_joint: None,
            penalty: Penalty::Gcv,
        }
    }
}

impl SmootherSettings {
    fn spatial_k(&self, n: usize) -> usize {
        self.k_spatial.min(n / 2).max(2)
    }

    fn joint_k(&self, n: usize) -> usize {
        self.k_joint.unwrap_or_else(|| joint_basis_size(n)).min(n / 2).max(2)
    }
}

fn cov_row(ds: &Dataset, i: usize) -> Vec<f64> {
    ds.covariates
        .as_ref()
        .map(|c| c.row(i).to_vec())
        .unwrap_or_default()
}

fn check_exposure_variance(ds: &Dataset) -> Result<(f64, f64)> {
    let n = ds.len() as f64;
    let xbar = ds.x.iter().sum::<f64>() / n;
    let sxx: f64 = ds.x.iter().map(|v| (v - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateDesign);
    }
    Ok((xbar, sxx))
}

/// OLS of y on [1, x, covariates]; returns the exposure slope.
fn ols_slope(ds: &Dataset, y: &[f64], x: &[f64]) -> Result<f64> {
    let n = ds.len();
    let p_cov = ds.covariates.as_ref().map_or(0, |c| c.ncols());
    let p = 2 + p_cov;
    if n < p + 1 {
        return Err(Error::InvalidArgument("too few rows for OLS".into()));
    }
    let mut u = Array2::zeros((n, p));
    for i in 0..n {
        u[[i, 0]] = 1.0;
        u[[i, 1]] = x[i];
        if let Some(c) = &ds.covariates {
            for j in 0..p_cov {
                u[[i, 2 + j]] = c[[i, j]];
            }
        }
    }
    let yv = Array1::from(y.to_vec());
    let coef = u
        .t()
        .dot(&u)
        .solveh(&u.t().dot(&yv))
        .map_err(|e| Error::NumericalFailure(format!("OLS solve: {e}")))?;
    Ok(coef[1])
}

pub fn estimate_ols(ds: &Dataset, delta: f64) -> Result<ShiftEstimate> {
    if ds.len() < 3 {
        return Err(Error::InvalidArgument("OLS needs n >= 3".into()));
    }
    check_exposure_variance(ds)?;
    let beta = ols_slope(ds, &ds.y, &ds.x)?;
    ShiftEstimate::new("ols", delta, beta * delta)
}

/// Restricted spatial regression: identical point estimate to OLS, reported
/// under its own label (the restriction changes intervals, not the point).
pub fn estimate_rsr(ds: &Dataset, delta: f64) -> Result<ShiftEstimate> {
    let mut est = estimate_ols(ds, delta)?;
    est.method = "rsr".into();
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlmSmoother {
    Rbf,
    Gp,
}

/// Partially linear model: Y = a + b X + g(S) + covariates + noise, with g
/// either a penalized radial basis or a profiled Gaussian process.
pub fn estimate_plm(
    ds: &Dataset,
    delta: f64,
    smoother: PlmSmoother,
    settings: &SmootherSettings,
) -> Result<ShiftEstimate> {
    check_exposure_variance(ds)?;
    let n = ds.len();
    match smoother {
        PlmSmoother::Gp => {
            let pts = locations_design(&ds.locations);
            let plm = fit_gp_plm(&pts, &ds.x, &ds.y, ds.covariates.as_ref())?;
            let mut est = ShiftEstimate::new("plm_gp", delta, plm.beta * delta)?;
            est.diagnostics.lambdas = vec![plm.rho, plm.eta];
            Ok(est)
        }
        PlmSmoother::Rbf => {
            let k = settings.spatial_k(n);
            let pts = locations_design(&ds.locations);
            let basis = RadialBasis::fit(&pts, k)?;
            let b = basis.eval(&pts);
            let aff = basis.affine(&pts);
            let p_cov = ds.covariates.as_ref().map_or(0, |c| c.ncols());
            let mut u = Array2::zeros((n, 4 + p_cov));
            for i in 0..n {
                u[[i, 0]] = aff[[i, 0]];
                u[[i, 1]] = ds.x[i];
                u[[i, 2]] = aff[[i, 1]];
                u[[i, 3]] = aff[[i, 2]];
                if let Some(c) = &ds.covariates {
                    for j in 0..p_cov {
                        u[[i, 4 + j]] = c[[i, j]];
                    }
                }
            }
            let yv = Array1::from(ds.y.clone());
            let sol = solve_penalized(&u, &b, &yv, settings.penalty)?;
            let mut est = ShiftEstimate::new("plm_rbf", delta, sol.alpha[1] * delta)?;
            est.diagnostics.lambdas = vec![sol.lambda];
            Ok(est)
        }
    }
}

/// Geoadditive SEM: residualize both Y and X on space, then OLS of the
/// outcome residuals on the exposure residuals.
pub fn estimate_gsem(ds: &Dataset, delta: f64, settings: &SmootherSettings) -> Result<ShiftEstimate> {
    let n = ds.len();
    check_exposure_variance(ds)?;
    let k = settings.spatial_k(n);
    let pts = locations_design(&ds.locations);
    let fy = crate::learners::rbf::fit_rbf_smoother(&pts, &ds.y, k, settings.penalty)?;
    let fx = crate::learners::rbf::fit_rbf_smoother(&pts, &ds.x, k, settings.penalty)?;
    let ry = fy.residuals(&pts, &ds.y);
    let rx = fx.residuals(&pts, &ds.x);
    let rxbar = rx.iter().sum::<f64>() / n as f64;
    let srr: f64 = rx.iter().map(|v| (v - rxbar).powi(2)).sum();
    let xbar = ds.x.iter().sum::<f64>() / n as f64;
    let sxx: f64 = ds.x.iter().map(|v| (v - xbar).powi(2)).sum();
    if srr <= 1e-10 * sxx {
        return Err(Error::DegenerateExposure);
    }
    let beta = ols_slope(ds, &ry, &rx)?;
    let mut est = ShiftEstimate::new("gsem", delta, beta * delta)?;
    est.diagnostics.lambdas = vec![fy.lambda, fx.lambda];
    Ok(est)
}

/// spatial+: residualize X on space, then a PLM of Y on the exposure
/// residuals plus a penalized spatial term.
pub fn estimate_spatial_plus(
    ds: &Dataset,
    delta: f64,
    settings: &SmootherSettings,
) -> Result<ShiftEstimate> {
    let n = ds.len();
    check_exposure_variance(ds)?;
    let k = settings.spatial_k(n);
    let pts = locations_design(&ds.locations);
    let fx = crate::learners::rbf::fit_rbf_smoother(&pts, &ds.x, k, settings.penalty)?;
    let rx = fx.residuals(&pts, &ds.x);
    let rxbar = rx.iter().sum::<f64>() / n as f64;
    let srr: f64 = rx.iter().map(|v| (v - rxbar).powi(2)).sum();
    let xbar = ds.x.iter().sum::<f64>() / n as f64;
    let sxx: f64 = ds.x.iter().map(|v| (v - xbar).powi(2)).sum();
    if srr <= 1e-10 * sxx {
        return Err(Error::DegenerateExposure);
    }

    let basis = RadialBasis::fit(&pts, k)?;
    let b = basis.eval(&pts);
    let aff = basis.affine(&pts);
    let p_cov = ds.covariates.as_ref().map_or(0, |c| c.ncols());
    let mut u = Array2::zeros((n, 4 + p_cov));
    for i in 0..n {
        u[[i, 0]] = aff[[i, 0]];
        u[[i, 1]] = rx[i];
        u[[i, 2]] = aff[[i, 1]];
        u[[i, 3]] = aff[[i, 2]];
        if let Some(c) = &ds.covariates {
            for j in 0..p_cov {
                u[[i, 4 + j]] = c[[i, j]];
            }
        }
    }
    let yv = Array1::from(ds.y.clone());
    let sol = solve_penalized(&u, &b, &yv, settings.penalty)?;
    let mut est = ShiftEstimate::new("spatial_plus", delta, sol.alpha[1] * delta)?;
    est.diagnostics.lambdas = vec![fx.lambda, sol.lambda];
    Ok(est)
}

/// Spatially varying coefficient model: varying intercept f1(S) and varying
/// slope f2(S) X, both penalized; effect = mean slope times delta.
pub fn estimate_svc(ds: &Dataset, delta: f64, settings: &SmootherSettings) -> Result<ShiftEstimate> {
    let n = ds.len();
    check_exposure_variance(ds)?;
    let k = settings.spatial_k(n);
    if n < 2 * k {
        return Err(Error::InvalidArgument("SVC needs n >= 2k".into()));
    }
    let pts = locations_design(&ds.locations);
    let basis = RadialBasis::fit(&pts, k)?;
    let b = basis.eval(&pts);
    let aff = basis.affine(&pts);

    let p_cov = ds.covariates.as_ref().map_or(0, |c| c.ncols());
    // unpenalized: affine intercept surface [1, z1, z2], affine slope
    // surface [x, x z1, x z2], covariates
    let mut u = Array2::zeros((n, 6 + p_cov));
    let mut pen = Array2::zeros((n, 2 * k));
    for i in 0..n {
        let x = ds.x[i];
        u[[i, 0]] = 1.0;
        u[[i, 1]] = aff[[i, 1]];
        u[[i, 2]] = aff[[i, 2]];
        u[[i, 3]] = x;
        u[[i, 4]] = x * aff[[i, 1]];
        u[[i, 5]] = x * aff[[i, 2]];
        if let Some(c) = &ds.covariates {
            for j in 0..p_cov {
                u[[i, 6 + j]] = c[[i, j]];
            }
        }
        for j in 0..k {
            pen[[i, j]] = b[[i, j]];
            pen[[i, k + j]] = x * b[[i, j]];
        }
    }
    let yv = Array1::from(ds.y.clone());
    let sol = solve_penalized(&u, &pen, &yv, settings.penalty)?;

    let mut slope_sum = 0.0;
    for i in 0..n {
        let mut slope = sol.alpha[3] + sol.alpha[4] * aff[[i, 1]] + sol.alpha[5] * aff[[i, 2]];
        for j in 0..k {
            slope += sol.beta[k + j] * b[[i, j]];
        }
        slope_sum += slope;
    }
    let mut est = ShiftEstimate::new("svc", delta, slope_sum / n as f64 * delta)?;
    est.diagnostics.lambdas = vec![sol.lambda];
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointLearner {
    Rbf,
    Gp,
    Forest,
}

fn count_extrapolations(ds: &Dataset, delta: f64) -> usize {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in &ds.x {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    ds.x.iter()
        .filter(|&&x| x + delta < lo || x + delta > hi)
        .count()
}

/// Flexible outcome-model estimator: fit m(x, s) jointly, report the mean
/// difference between shifted and observed predictions.
pub fn estimate_flexible_shift(
    ds: &Dataset,
    delta: f64,
    learner: JointLearner,
    settings: &SmootherSettings,
    seed: u64,
) -> Result<ShiftEstimate> {
    let n = ds.len();
    check_exposure_variance(ds)?;
    let (model, lambdas, name): (Box<dyn OutcomeModel>, Vec<f64>, &str) = match learner {
        JointLearner::Rbf => {
            let m = fit_rbf_joint(ds, settings.joint_k(n), settings.penalty)?;
            let lam = m.smoother.lambda;
            (Box::new(m), vec![lam], "flex_rbf")
        }
        JointLearner::Gp => {
            let m = fit_gp_joint(ds)?;
            let lam = vec![m.model.rho, m.model.eta];
            (Box::new(m), lam, "flex_gp")
        }
        JointLearner::Forest => (Box::new(fit_forest_joint(ds, seed)?), vec![], "flex_forest"),
    };

    let mut sum = 0.0;
    for i in 0..n {
        let p = ds.locations.point(i);
        let s = [p.x, p.y];
        let cov = cov_row(ds, i);
        // identical arguments when delta = 0, so the difference is exactly 0
        sum += model.predict(ds.x[i] + delta, &s, &cov) - model.predict(ds.x[i], &s, &cov);
    }
    let mut est = ShiftEstimate::new(name, delta, sum / n as f64)?;
    est.diagnostics.lambdas = lambdas;
    est.diagnostics.extrapolations = count_extrapolations(ds, delta);
    Ok(est)
}

/// Outcome and density-ratio nuisances fitted under the same shift.
pub struct NuisancePair {
    pub outcome: Box<dyn OutcomeModel>,
    pub ratio: Box<dyn ShiftWeight>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrOutcome {
    Rbf,
    Forest,
}

pub fn fit_nuisances(
    ds: &Dataset,
    delta: f64,
    outcome: DrOutcome,
    settings: &SmootherSettings,
    exposure: &ExposureConfig,
    seed: u64,
) -> Result<NuisancePair> {
    let n = ds.len();
    let mut lambdas = Vec::new();
    let model: Box<dyn OutcomeModel> = match outcome {
        DrOutcome::Rbf => {
            let m = fit_rbf_joint(ds, settings.joint_k(n), settings.penalty)?;
            lambdas.push(m.smoother.lambda);
            Box::new(m)
        }
        DrOutcome::Forest => Box::new(fit_forest_joint(ds, seed)?),
    };
    let exp_model = fit_exposure_model(&ds.locations, &ds.x, exposure)?;
    lambdas.push(exp_model.mean.lambda);
    Ok(NuisancePair {
        outcome: model,
        ratio: Box::new(DensityRatio::new(exp_model, delta)),
        lambdas,
    })
}

struct DrTerms {
    gamma: f64,
    point: f64,
    ess: f64,
    clipped: usize,
    all_clipped: bool,
}

fn dr_terms(ds: &Dataset, delta: f64, nuis: &NuisancePair) -> Result<DrTerms> {
    if (nuis.ratio.shift() - delta).abs() > 0.0 {
        return Err(Error::InvalidArgument(
            "density ratio fitted under a different shift".into(),
        ));
    }
    let n = ds.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut s_lr = 0.0;
    let mut s_l2 = 0.0;
    let mut a = 0.0; // sum of m(x + delta) - y
    let mut b = 0.0; // sum of lambda(x + delta)
    let mut s_l = 0.0;
    let mut clipped = 0;
    let mut clipped_obs = 0;
    for i in 0..n {
        let p = ds.locations.point(i);
        let s = [p.x, p.y];
        let cov = cov_row(ds, i);
        let m_obs = nuis.outcome.predict(ds.x[i], &s, &cov);
        let m_shift = nuis.outcome.predict(ds.x[i] + delta, &s, &cov);
        let lam_obs = nuis.ratio.eval(ds.x[i], &s);
        let lam_shift = nuis.ratio.eval(ds.x[i] + delta, &s);
        if nuis.ratio.is_clipped(lam_obs) {
            clipped += 1;
            clipped_obs += 1;
        }
        if nuis.ratio.is_clipped(lam_shift) {
            clipped += 1;
        }
        let r = ds.y[i] - m_obs;
        s_lr += lam_obs * r;
        s_l2 += lam_obs * lam_obs;
        s_l += lam_obs;
        a += m_shift - ds.y[i];
        b += lam_shift;
    }
    if s_l2 <= 0.0 {
        return Err(Error::NumericalFailure("zero density-ratio weights".into()));
    }
    let gamma = s_lr / s_l2;
    let nf = n as f64;
    // grouped so the delta = 0 identity cancels exactly in floating point
    let point = a / nf + gamma * (b / nf);
    Ok(DrTerms {
        gamma,
        point,
        ess: s_l * s_l / s_l2,
        clipped,
        all_clipped: clipped_obs == n,
    })
}

/// Doubly robust estimating-equation form: gamma solves the linear
/// estimating equation in the density-ratio covariate, and the shifted mean
/// adds gamma times the shifted ratio to the outcome-model predictions.
pub fn estimate_dr_shift(ds: &Dataset, delta: f64, nuis: &NuisancePair) -> Result<ShiftEstimate> {
    let terms = dr_terms(ds, delta, nuis)?;
    let mut est = ShiftEstimate::new("dml", delta, terms.point)?;
    est.diagnostics.gamma = Some(terms.gamma);
    est.diagnostics.weight_ess = Some(terms.ess);
    est.diagnostics.clipped_weights = terms.clipped;
    est.diagnostics.weight_degeneracy = terms.all_clipped;
    est.diagnostics.extrapolations = count_extrapolations(ds, delta);
    est.diagnostics.lambdas = nuis.lambdas.clone();
    Ok(est)
}

/// Doubly robust plug-in form: weighted residual correction plus shifted
/// outcome-model predictions.
pub fn estimate_dr_plugin(ds: &Dataset, delta: f64, nuis: &NuisancePair) -> Result<ShiftEstimate> {
    if (nuis.ratio.shift() - delta).abs() > 0.0 {
        return Err(Error::InvalidArgument(
            "density ratio fitted under a different shift".into(),
        ));
    }
    let n = ds.len();
    let mut sum = 0.0;
    let mut clipped = 0;
    for i in 0..n {
        let p = ds.locations.point(i);
        let s = [p.x, p.y];
        let cov = cov_row(ds, i);
        let m_obs = nuis.outcome.predict(ds.x[i], &s, &cov);
        let m_shift = nuis.outcome.predict(ds.x[i] + delta, &s, &cov);
        let lam = nuis.ratio.eval(ds.x[i], &s);
        if nuis.ratio.is_clipped(lam) {
            clipped += 1;
        }
        let r = ds.y[i] - m_obs;
        // per-term grouping cancels exactly when delta = 0
        sum += lam * r - (ds.y[i] - m_shift);
    }
    let mut est = ShiftEstimate::new("dml_plugin", delta, sum / n as f64)?;
    est.diagnostics.clipped_weights = clipped;
    est.diagnostics.extrapolations = count_extrapolations(ds, delta);
    est.diagnostics.lambdas = nuis.lambdas.clone();
    Ok(est)
}

/// Plug-in influence-function variance of mu_hat: empirical variance of
/// psi_i = lambda_i (y_i - m_i) + m(x_i + delta) - mu_hat, divided by n.
/// Ignores spatial dependence.
pub fn if_variance(ds: &Dataset, delta: f64, nuis: &NuisancePair, mu_hat: f64) -> f64 {
    let n = ds.len();
    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let p = ds.locations.point(i);
            let s = [p.x, p.y];
            let cov = cov_row(ds, i);
            let m_obs = nuis.outcome.predict(ds.x[i], &s, &cov);
            let m_shift = nuis.outcome.predict(ds.x[i] + delta, &s, &cov);
            let lam = nuis.ratio.eval(ds.x[i], &s);
            lam * (ds.y[i] - m_obs) + m_shift - mu_hat
        })
        .collect();
    let mean = psi.iter().sum::<f64>() / n as f64;
    let var = psi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    var / n as f64
}

#[derive(Debug, Clone)]
pub struct CrossfitConfig {
    /// Fit-ball radius.
    pub q: f64,
    /// Minimum fit/eval separation (the locally covariant noise radius).
    pub r: f64,
    pub folds: usize,
    /// Weight fold estimates by evaluation-set size instead of equally.
    pub size_weighted: bool,
    pub outcome: DrOutcome,
    pub settings: SmootherSettings,
    pub exposure: ExposureConfig,
}

/// Spatially blocked cross-fitting: nuisances fitted on a ball M, the DR
/// estimator evaluated on the far set M^C, averaged over folds.
pub fn spatial_crossfit<R: Rng + ?Sized>(
    ds: &Dataset,
    delta: f64,
    config: &CrossfitConfig,
    seed: u64,
    rng: &mut R,
) -> Result<ShiftEstimate> {
    if config.folds == 0 {
        return Err(Error::InvalidArgument("folds must be >= 1".into()));
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut geometry = Vec::new();
    let mut failed = 0usize;
    let mut all_degenerate_exposure = true;
    for fold in 0..config.folds {
        let fold_result: Result<(f64, f64, f64)> = (|| {
            let split = spatial_block_split(&ds.locations, config.q, config.r, rng)?;
            let fit_ds = ds.subset(&split.fit_indices);
            let eval_ds = ds.subset(&split.eval_indices);
            let nuis = fit_nuisances(
                &fit_ds,
                delta,
                config.outcome,
                &config.settings,
                &config.exposure,
                seed.wrapping_add(fold as u64),
            )?;
            let est = estimate_dr_shift(&eval_ds, delta, &nuis)?;
            Ok((
                est.point,
                split.eval_indices.len() as f64,
                split.min_cross_distance(&ds.locations),
            ))
        })();
        match fold_result {
            Ok((point, w, dist)) => {
                points.push(point);
                weights.push(w);
                geometry.push(dist);
            }
            Err(e) => {
                if !matches!(e, Error::DegenerateExposure) {
                    all_degenerate_exposure = false;
                }
                failed += 1;
            }
        }
    }
    if points.is_empty() {
        // distinguish a positivity failure from fold-level numerical trouble
        if all_degenerate_exposure {
            return Err(Error::DegenerateExposure);
        }
        return Err(Error::CrossfitFailure {
            folds: config.folds,
        });
    }
    let point = if config.size_weighted {
        let wsum: f64 = weights.iter().sum();
        points
            .iter()
            .zip(weights.iter())
            .map(|(p, w)| p * w)
            .sum::<f64>()
            / wsum
    } else {
        points.iter().sum::<f64>() / points.len() as f64
    };
    let mut est = ShiftEstimate::new("dml_crossfit", delta, point)?;
    est.diagnostics.fold_min_cross_distance = geometry;
    est.diagnostics.failed_folds = failed;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, outcome_mean, Scenario, ScenarioSpec};
    use crate::learners::FnOutcome;
    use crate::spatial::sample_locations;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn exact_linear(n: usize, slope: f64, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let locations = sample_locations(n, &mut r).unwrap();
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v).collect();
        Dataset {
            locations,
            x,
            y,
            u: None,
            covariates: None,
            noise: None,
            scenario: None,
        }
    }

    #[test]
    fn ols_exact_linear() {
        let ds = exact_linear(200, 2.0, 61);
        let est = estimate_ols(&ds, 1.0).unwrap();
        assert!((est.point - 2.0).abs() < 1e-10);
        assert_eq!(estimate_ols(&ds, 0.0).unwrap().point, 0.0);
        assert_eq!(estimate_rsr(&ds, 1.0).unwrap().point, est.point);
    }

    #[test]
    fn ols_degenerate_exposure() {
        let mut ds = exact_linear(50, 1.0, 62);
        ds.x = vec![1.0; 50];
        assert!(matches!(
            estimate_ols(&ds, 1.0),
            Err(Error::DegenerateDesign)
        ));
    }

    #[test]
    fn plm_no_spatial_signal_matches_ols() {
        let mut r = rng(63);
        let n = 500;
        let locations = sample_locations(n, &mut r).unwrap();
        let x: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 1.5 * v + 0.1 * r.sample::<f64, _>(StandardNormal))
            .collect();
        let ds = Dataset {
            locations,
            x,
            y,
            u: None,
            covariates: None,
            noise: None,
            scenario: None,
        };
        let ols = estimate_ols(&ds, 1.0).unwrap();
        let plm = estimate_plm(&ds, 1.0, PlmSmoother::Rbf, &SmootherSettings::default()).unwrap();
        assert!(
            (plm.point - ols.point).abs() < 1e-3,
            "plm {} vs ols {}",
            plm.point,
            ols.point
        );
    }

    #[test]
    fn gsem_no_confounding_recovers_slope() {
        let mut r = rng(64);
        let n = 1500;
        let locations = sample_locations(n, &mut r).unwrap();
        let x: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = locations
            .points()
            .iter()
            .zip(x.iter())
            .map(|(p, xv)| 2.0 * xv + (3.0 * p.x).sin() + p.y + 0.5 * r.sample::<f64, _>(StandardNormal))
            .collect();
        let ds = Dataset {
            locations,
            x,
            y,
            u: None,
            covariates: None,
            noise: None,
            scenario: None,
        };
        let est = estimate_gsem(&ds, 1.0, &SmootherSettings::default()).unwrap();
        assert!((est.point - 2.0).abs() < 0.1, "gsem = {}", est.point);
        assert_eq!(estimate_gsem(&ds, 0.0, &SmootherSettings::default()).unwrap().point, 0.0);
    }

    #[test]
    fn svc_homogeneous_slope_surface() {
        let mut r = rng(65);
        let n = 1200;
        let locations = sample_locations(n, &mut r).unwrap();
        let x: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = locations
            .points()
            .iter()
            .zip(x.iter())
            .map(|(p, xv)| 2.0 * xv + p.x + p.y + 0.3 * r.sample::<f64, _>(StandardNormal))
            .collect();
        let ds = Dataset {
            locations,
            x,
            y,
            u: None,
            covariates: None,
            noise: None,
            scenario: None,
        };
        let settings = SmootherSettings {
            k_spatial: 100,
            ..Default::default()
        };
        let est = estimate_svc(&ds, 1.0, &settings).unwrap();
        assert!((est.point - 2.0).abs() < 0.05, "svc = {}", est.point);
        assert_eq!(estimate_svc(&ds, 0.0, &settings).unwrap().point, 0.0);
    }

    #[test]
    fn flexible_zero_delta_exact() {
        let spec = ScenarioSpec::new(Scenario::Simple);
        let ds = generate(&spec, 400, &mut rng(66)).unwrap();
        for learner in [JointLearner::Rbf, JointLearner::Forest] {
            let est =
                estimate_flexible_shift(&ds, 0.0, learner, &SmootherSettings::default(), 1).unwrap();
            assert_eq!(est.point, 0.0, "{learner:?}");
        }
    }

    #[test]
    fn dr_zero_delta_exact_any_outcome_model() {
        let spec = ScenarioSpec::new(Scenario::Simple);
        let ds = generate(&spec, 500, &mut rng(67)).unwrap();
        let exp = fit_exposure_model(&ds.locations, &ds.x, &ExposureConfig::default()).unwrap();
        // deliberately weird outcome model
        let nuis = NuisancePair {
            outcome: Box::new(FnOutcome(|x: f64, s: &[f64]| x.sin() * 7.0 + s[0] * 100.0)),
            ratio: Box::new(DensityRatio::new(exp, 0.0)),
            lambdas: vec![],
        };
        let ee = estimate_dr_shift(&ds, 0.0, &nuis).unwrap();
        assert_eq!(ee.point, 0.0);
        let plug = estimate_dr_plugin(&ds, 0.0, &nuis).unwrap();
        assert_eq!(plug.point, 0.0);
    }

    #[test]
    fn dr_oracle_outcome_gamma_small() {
        let spec = ScenarioSpec::new(Scenario::Simple);
        let ds = generate(&spec, 10_000, &mut rng(68)).unwrap();
        let exp = fit_exposure_model(&ds.locations, &ds.x, &ExposureConfig::default()).unwrap();
        let u = ds.u.clone().unwrap();
        let locs = ds.locations.clone();
        // oracle conditional mean, looked up by location identity
        let nuis = NuisancePair {
            outcome: Box::new(FnOutcome(move |x: f64, s: &[f64]| {
                let i = locs
                    .points()
                    .iter()
                    .position(|p| p.x == s[0] && p.y == s[1])
                    .unwrap();
                outcome_mean(Scenario::Simple, x, u[i], 0.0)
            })),
            ratio: Box::new(DensityRatio::new(exp, 1.0)),
            lambdas: vec![],
        };
        // subsample for the position lookup cost
        let idx: Vec<usize> = (0..ds.len()).collect();
        let est = estimate_dr_shift(&ds.subset(&idx[..2000]), 1.0, &nuis).unwrap();
        let gamma = est.diagnostics.gamma.unwrap();
        assert!(gamma.abs() < 0.08, "gamma = {gamma}");
        assert!((est.point - 1.0).abs() < 0.15, "point = {}", est.point);
    }

    #[test]
    fn if_variance_constant_psi_is_zero() {
        let mut r = rng(69);
        let n = 300;
        let locations = sample_locations(n, &mut r).unwrap();
        let x: Vec<f64> = locations
            .points()
            .iter()
            .map(|p| p.x + 2.0 * r.sample::<f64, _>(StandardNormal))
            .collect();
        let y = vec![3.0; n];
        let ds = Dataset {
            locations,
            x,
            y,
            u: None,
            covariates: None,
            noise: None,
            scenario: None,
        };
        let exp = fit_exposure_model(&ds.locations, &ds.x, &ExposureConfig::default()).unwrap();
        let nuis = NuisancePair {
            outcome: Box::new(FnOutcome(|_x: f64, _s: &[f64]| 3.0)),
            ratio: Box::new(DensityRatio::new(exp, 1.0)),
            lambdas: vec![],
        };
        // psi_i = lambda * 0 + 3 - mu_hat, constant across i
        let v = if_variance(&ds, 1.0, &nuis, 3.0);
        assert!(v.abs() < 1e-24, "v = {v}");
    }

    #[test]
    fn crossfit_split_geometry_reported() {
        let spec = ScenarioSpec::new(Scenario::Simple);
        let ds = generate(&spec, 1500, &mut rng(70)).unwrap();
        let config = CrossfitConfig {
            q: 0.8,
            r: 0.1,
            folds: 4,
            size_weighted: false,
            outcome: DrOutcome::Rbf,
            settings: SmootherSettings {
                k_joint: Some(150),
                ..Default::default()
            },
            exposure: ExposureConfig {
                k: 100,
                ..Default::default()
            },
        };
        let est = spatial_crossfit(&ds, 1.0, &config, 7, &mut rng(71)).unwrap();
        assert!(!est.diagnostics.fold_min_cross_distance.is_empty());
        for d in &est.diagnostics.fold_min_cross_distance {
            assert!(*d >= 0.1, "cross distance {d}");
        }
    }

    #[test]
    fn crossfit_degenerate_when_ball_covers_domain() {
        let spec = ScenarioSpec::new(Scenario::Simple);
        let ds = generate(&spec, 300, &mut rng(72)).unwrap();
        let config = CrossfitConfig {
            q: 10.0, // covers every point, eval set always empty
            r: 0.0,
            folds: 2,
            size_weighted: false,
            outcome: DrOutcome::Rbf,
            settings: SmootherSettings {
                k_joint: Some(50),
                ..Default::default()
            },
            exposure: ExposureConfig {
                k: 50,
                ..Default::default()
            },
        };
        assert!(matches!(
            spatial_crossfit(&ds, 1.0, &config, 7, &mut rng(73)),
            Err(Error::CrossfitFailure { folds: 2 })
        ));
    }
}
