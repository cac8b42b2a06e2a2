//! Nuisance learners: outcome regressions m(x, s), exposure models h(s) with
//! residual densities, and the density-ratio weights they induce.

pub mod exposure;
pub mod forest;
pub mod gp;
pub mod rbf;

use ndarray::Array2;

use crate::dgp::Dataset;
use crate::error::Result;
use crate::learners::exposure::locations_design;
use crate::learners::forest::{fit_forest, Forest};
use crate::learners::gp::{fit_gp, GpModel};
use crate::learners::rbf::{fit_rbf_smoother, Penalty, RbfSmoother};

/// A fitted conditional-mean model for the outcome. Prediction is defined
/// for any finite (x, s, covariates), including points outside the training
/// hull; extrapolation bookkeeping is the estimator's job.
pub trait OutcomeModel: Send + Sync {
    fn predict(&self, x: f64, s: &[f64], cov: &[f64]) -> f64;
}

/// Closure adapter, used for oracle models in tests and the
/// double-robustness suite.
pub struct FnOutcome<F: Fn(f64, &[f64]) -> f64 + Send + Sync>(pub F);

impl<F: Fn(f64, &[f64]) -> f64 + Send + Sync> OutcomeModel for FnOutcome<F> {
    fn predict(&self, x: f64, s: &[f64], _cov: &[f64]) -> f64 {
        (self.0)(x, s)
    }
}

/// Default joint-smoother basis size: 500 in moderate samples, 1000 in
/// large ones.
pub fn joint_basis_size(n: usize) -> usize {
    if n >= 5000 {
        1000
    } else {
        500
    }
}

/// Design matrix [x, s1, s2, covariates...] for joint (exposure, location)
/// learners.
pub fn joint_design(ds: &Dataset) -> Array2<f64> {
    let n = ds.len();
    let p_cov = ds.covariates.as_ref().map_or(0, |c| c.ncols());
    let mut out = Array2::zeros((n, 3 + p_cov));
    for i in 0..n {
        let p = ds.locations.point(i);
        out[[i, 0]] = ds.x[i];
        out[[i, 1]] = p.x;
        out[[i, 2]] = p.y;
        if let Some(c) = &ds.covariates {
            for j in 0..p_cov {
                out[[i, 3 + j]] = c[[i, j]];
            }
        }
    }
    out
}

fn joint_row(x: f64, s: &[f64], cov: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(1 + s.len() + cov.len());
    row.push(x);
    row.extend_from_slice(s);
    row.extend_from_slice(cov);
    row
}

/// Per-column scales for the joint design. The exposure's spread is often an
/// order of magnitude larger than the location coordinates'; without
/// per-column scaling an isotropic kernel spends all its resolution on the
/// exposure axis.
fn column_scales(design: &Array2<f64>) -> Vec<f64> {
    let n = design.nrows() as f64;
    (0..design.ncols())
        .map(|j| {
            let col = design.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect()
}

fn scale_design(design: &mut Array2<f64>, scales: &[f64]) {
    for (j, &s) in scales.iter().enumerate() {
        design.column_mut(j).mapv_inplace(|v| v / s);
    }
}

fn scale_row(row: &mut [f64], scales: &[f64]) {
    for (v, &s) in row.iter_mut().zip(scales.iter()) {
        *v /= s;
    }
}

/// Joint radial-basis smoother over (x, s, covariates), fitted on the
/// column-standardized design.
pub struct JointRbf {
    pub smoother: RbfSmoother,
    scales: Vec<f64>,
}

pub fn fit_rbf_joint(ds: &Dataset, k: usize, penalty: Penalty) -> Result<JointRbf> {
    let mut design = joint_design(ds);
    let scales = column_scales(&design);
    scale_design(&mut design, &scales);
    let smoother = fit_rbf_smoother(&design, &ds.y, k, penalty)?;
    Ok(JointRbf { smoother, scales })
}

impl OutcomeModel for JointRbf {
    fn predict(&self, x: f64, s: &[f64], cov: &[f64]) -> f64 {
        let mut row = joint_row(x, s, cov);
        scale_row(&mut row, &self.scales);
        self.smoother.predict(&row)
    }
}

/// Joint Gaussian-process regression over (x, s, covariates), fitted on the
/// column-standardized design.
pub struct JointGp {
    pub model: GpModel,
    scales: Vec<f64>,
}

pub fn fit_gp_joint(ds: &Dataset) -> Result<JointGp> {
    let mut design = joint_design(ds);
    let scales = column_scales(&design);
    scale_design(&mut design, &scales);
    let model = fit_gp(&design, &ds.y)?;
    Ok(JointGp { model, scales })
}

impl OutcomeModel for JointGp {
    fn predict(&self, x: f64, s: &[f64], cov: &[f64]) -> f64 {
        let mut row = joint_row(x, s, cov);
        scale_row(&mut row, &self.scales);
        self.model.predict(&row)
    }
}

/// Joint random-forest regression over (x, s, covariates).
pub struct JointForest {
    pub forest: Forest,
}

pub fn fit_forest_joint(ds: &Dataset, seed: u64) -> Result<JointForest> {
    let design = joint_design(ds);
    let forest = fit_forest(
        &design,
        &ds.y,
        forest::DEFAULT_TREES,
        forest::DEFAULT_LEAF_MIN,
        seed,
    )?;
    Ok(JointForest { forest })
}

impl OutcomeModel for JointForest {
    fn predict(&self, x: f64, s: &[f64], cov: &[f64]) -> f64 {
        self.forest.predict(&joint_row(x, s, cov))
    }
}

/// Spatial-only smoother h(s), exposed as an OutcomeModel that ignores x.
pub struct SpatialRbf {
    pub smoother: RbfSmoother,
}

pub fn fit_spatial_rbf(ds: &Dataset, targets: &[f64], k: usize, penalty: Penalty) -> Result<SpatialRbf> {
    let pts = locations_design(&ds.locations);
    let smoother = fit_rbf_smoother(&pts, targets, k, penalty)?;
    Ok(SpatialRbf { smoother })
}

impl OutcomeModel for SpatialRbf {
    fn predict(&self, _x: f64, s: &[f64], _cov: &[f64]) -> f64 {
        self.smoother.predict(s)
    }
}
