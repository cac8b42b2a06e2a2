//! Exact Gaussian-process regression with an isotropic exponential kernel.
//! Hyperparameters (range, nugget ratio) are chosen by profiled maximum
//! marginal likelihood on a coarse grid followed by local refinement; the
//! signal variance is profiled out in closed form. Exact solves only, so
//! fits are capped at a configurable n.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Cholesky, SolveTriangular, Diag, UPLO};

use crate::error::{Error, Result};

pub const GP_EXACT_CAP: usize = 2000;

#[derive(Debug, Clone)]
pub struct GpModel {
    train: Array2<f64>,
    shift: Array1<f64>,
    scale: f64,
    /// (C + eta I)^{-1} (y - y_mean); the profiled variance cancels in the
    /// posterior mean.
    alpha: Array1<f64>,
    y_mean: f64,
    pub rho: f64,
    pub eta: f64,
    pub sigma2: f64,
    pub log_marginal: f64,
}

fn standardize(points: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, f64)> {
    let n = points.nrows();
    let dim = points.ncols();
    let shift = points.mean_axis(Axis(0)).unwrap();
    let mut total_var = 0.0;
    for j in 0..dim {
        total_var += points
            .column(j)
            .iter()
            .map(|v| (v - shift[j]).powi(2))
            .sum::<f64>()
            / n as f64;
    }
    let scale = (total_var / dim as f64).sqrt();
    if scale <= 0.0 {
        return Err(Error::DegenerateDesign);
    }
    let mut z = points.clone();
    for j in 0..dim {
        z.column_mut(j).mapv_inplace(|v| (v - shift[j]) / scale);
    }
    Ok((z, shift, scale))
}

fn distance_matrix(z: &Array2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let r: f64 = z
                .row(i)
                .iter()
                .zip(z.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[[i, j]] = r;
            d[[j, i]] = r;
        }
    }
    d
}

struct MlFit {
    alpha: Array1<f64>,
    sigma2: f64,
    log_marginal: f64,
}

/// Profiled log marginal likelihood at (rho, eta); returns None when the
/// Cholesky fails (kernel matrix numerically singular).
fn profile_ml(dist: &Array2<f64>, y_c: &Array1<f64>, rho: f64, eta: f64) -> Option<MlFit> {
    let n = y_c.len();
    let mut a = dist.mapv(|r| (-r / rho).exp());
    for i in 0..n {
        a[[i, i]] += eta;
    }
    let l = a.cholesky(UPLO::Lower).ok()?;
    let w = l
        .solve_triangular(UPLO::Lower, Diag::NonUnit, y_c)
        .ok()?;
    let alpha = l
        .t()
        .solve_triangular(UPLO::Upper, Diag::NonUnit, &w)
        .ok()?;
    let quad = y_c.dot(&alpha);
    if quad <= 0.0 {
        return None;
    }
    let sigma2 = quad / n as f64;
    let logdet: f64 = (0..n).map(|i| l[[i, i]].ln()).sum::<f64>() * 2.0;
    let ll = -0.5 * (n as f64 * sigma2.ln() + logdet + n as f64);
    Some(MlFit {
        alpha,
        sigma2,
        log_marginal: ll,
    })
}

/// Fit with maximum-marginal-likelihood hyperparameters.
pub fn fit_gp(inputs: &Array2<f64>, y: &[f64]) -> Result<GpModel> {
    fit_gp_capped(inputs, y, GP_EXACT_CAP)
}

pub fn fit_gp_capped(inputs: &Array2<f64>, y: &[f64], cap: usize) -> Result<GpModel> {
    let n = inputs.nrows();
    if n > cap {
        return Err(Error::CapacityExceeded { n, cap });
    }
    if n < 5 {
        return Err(Error::InvalidArgument("GP needs n >= 5".into()));
    }
    let (z, shift, scale) = standardize(inputs)?;
    let dist = distance_matrix(&z);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let y_c = Array1::from_iter(y.iter().map(|v| v - y_mean));

    let rho_grid = [0.1, 0.3, 1.0, 3.0, 10.0];
    let eta_grid = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
    let mut best: Option<(f64, f64, MlFit)> = None;
    let consider = |rho: f64, eta: f64, best: &mut Option<(f64, f64, MlFit)>| {
        if let Some(fit) = profile_ml(&dist, &y_c, rho, eta) {
            if best
                .as_ref()
                .map_or(true, |(_, _, b)| fit.log_marginal > b.log_marginal)
            {
                *best = Some((rho, eta, fit));
            }
        }
    };
    for &rho in &rho_grid {
        for &eta in &eta_grid {
            consider(rho, eta, &mut best);
        }
    }
    let coarse = best
        .as_ref()
        .map(|(r, e, _)| (*r, *e))
        .ok_or_else(|| Error::NumericalFailure("GP likelihood failed on entire grid".into()))?;
    // one round of local refinement around the coarse optimum
    for &fr in &[0.5, 0.7, 1.0, 1.4, 2.0] {
        for &fe in &[0.5, 0.7, 1.0, 1.4, 2.0] {
            if fr != 1.0 || fe != 1.0 {
                consider(coarse.0 * fr, coarse.1 * fe, &mut best);
            }
        }
    }
    let (rho, eta, fit) = best.unwrap();
    Ok(GpModel {
        train: z,
        shift,
        scale,
        alpha: fit.alpha,
        y_mean,
        rho,
        eta,
        sigma2: fit.sigma2,
        log_marginal: fit.log_marginal,
    })
}

/// Fit with fixed hyperparameters (used by tests and profiled PLM stages).
pub fn fit_gp_fixed(inputs: &Array2<f64>, y: &[f64], rho: f64, eta: f64) -> Result<GpModel> {
    let n = inputs.nrows();
    if n > GP_EXACT_CAP {
        return Err(Error::CapacityExceeded { n, cap: GP_EXACT_CAP });
    }
    let (z, shift, scale) = standardize(inputs)?;
    let dist = distance_matrix(&z);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let y_c = Array1::from_iter(y.iter().map(|v| v - y_mean));
    let fit = profile_ml(&dist, &y_c, rho, eta)
        .ok_or_else(|| Error::NumericalFailure("GP kernel matrix not positive definite".into()))?;
    Ok(GpModel {
        train: z,
        shift,
        scale,
        alpha: fit.alpha,
        y_mean,
        rho,
        eta,
        sigma2: fit.sigma2,
        log_marginal: fit.log_marginal,
    })
}

impl GpModel {
    pub fn predict(&self, p: &[f64]) -> f64 {
        let z: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.shift[j]) / self.scale)
            .collect();
        let mut out = self.y_mean;
        for (i, a) in self.alpha.iter().enumerate() {
            let r: f64 = z
                .iter()
                .zip(self.train.row(i).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            out += a * (-r / self.rho).exp();
        }
        out
    }
}

/// Partially linear model with a GP spatial term: slope by profiled GLS given
/// maximum-likelihood kernel hyperparameters, iterated twice.
pub struct GpPlm {
    pub intercept: f64,
    pub beta: f64,
    pub rho: f64,
    pub eta: f64,
}

pub fn fit_gp_plm(
    locations: &Array2<f64>,
    x: &[f64],
    y: &[f64],
    covariates: Option<&Array2<f64>>,
) -> Result<GpPlm> {
    use ndarray_linalg::SolveH;

    let n = y.len();
    if n > GP_EXACT_CAP {
        return Err(Error::CapacityExceeded { n, cap: GP_EXACT_CAP });
    }
    if n < 10 {
        return Err(Error::InvalidArgument("GP PLM needs n >= 10".into()));
    }
    let xbar = x.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateDesign);
    }
    // fixed-effects design: intercept, exposure, then linear covariates
    let p_cov = covariates.map_or(0, |c| c.ncols());
    let p = 2 + p_cov;
    let mut u = Array2::zeros((n, p));
    for i in 0..n {
        u[[i, 0]] = 1.0;
        u[[i, 1]] = x[i];
        if let Some(c) = covariates {
            for j in 0..p_cov {
                u[[i, 2 + j]] = c[[i, j]];
            }
        }
    }
    let yv = Array1::from(y.to_vec());
    let mut coef = u
        .t()
        .dot(&u)
        .solveh(&u.t().dot(&yv))
        .map_err(|e| Error::NumericalFailure(format!("PLM initial OLS: {e}")))?;
    let mut hyper = (1.0, 0.1);

    for _ in 0..2 {
        let fitted = u.dot(&coef);
        let resid: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
        let gp = fit_gp(locations, &resid)?;
        hyper = (gp.rho, gp.eta);

        // GLS with A = C(rho) + eta I
        let (z, _, _) = standardize(locations)?;
        let dist = distance_matrix(&z);
        let mut a = dist.mapv(|r| (-r / hyper.0).exp());
        for i in 0..n {
            a[[i, i]] += hyper.1;
        }
        let l = a
            .cholesky(UPLO::Lower)
            .map_err(|e| Error::NumericalFailure(format!("GLS Cholesky: {e}")))?;
        let solve = |v: &Array1<f64>| -> Result<Array1<f64>> {
            let w = l
                .solve_triangular(UPLO::Lower, Diag::NonUnit, v)
                .map_err(|e| Error::NumericalFailure(format!("GLS solve: {e}")))?;
            l.t()
                .solve_triangular(UPLO::Upper, Diag::NonUnit, &w)
                .map_err(|e| Error::NumericalFailure(format!("GLS solve: {e}")))
        };
        let mut ainv_u = Array2::zeros((n, p));
        for j in 0..p {
            ainv_u.column_mut(j).assign(&solve(&u.column(j).to_owned())?);
        }
        let m = u.t().dot(&ainv_u);
        let b = ainv_u.t().dot(&yv);
        coef = m
            .solveh(&b)
            .map_err(|e| Error::NumericalFailure(format!("GLS normal equations: {e}")))?;
    }

    Ok(GpPlm {
        intercept: coef[0],
        beta: coef[1],
        rho: hyper.0,
        eta: hyper.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn random_inputs(n: usize, d: usize, r: &mut ChaCha12Rng) -> Array2<f64> {
        let mut z = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                z[[i, j]] = r.gen_range(-1.0..1.0);
            }
        }
        z
    }

    #[test]
    fn huge_nugget_predicts_mean() {
        let mut r = rng(41);
        let z = random_inputs(100, 2, &mut r);
        let y: Vec<f64> = (0..100).map(|_| r.gen_range(0.0..4.0)).collect();
        let ybar = y.iter().sum::<f64>() / 100.0;
        let gp = fit_gp_fixed(&z, &y, 1.0, 1e6).unwrap();
        for q in [[0.0, 0.0], [0.5, -0.5]] {
            assert!((gp.predict(&q) - ybar).abs() < 1e-3);
        }
    }

    #[test]
    fn near_noiseless_interpolates() {
        let mut r = rng(42);
        let z = random_inputs(60, 2, &mut r);
        let y: Vec<f64> = (0..60).map(|i| (z[[i, 0]] + z[[i, 1]]).sin()).collect();
        let gp = fit_gp_fixed(&z, &y, 1.0, 1e-10).unwrap();
        for i in 0..60 {
            let q = [z[[i, 0]], z[[i, 1]]];
            assert!((gp.predict(&q) - y[i]).abs() < 1e-6, "i = {i}");
        }
    }

    #[test]
    fn one_dim_heldout_rmse() {
        let mut r = rng(43);
        let n = 500;
        let mut z = Array2::zeros((n, 1));
        let mut y = Vec::with_capacity(n);
        let noise_sd = 0.3;
        for i in 0..n {
            let v: f64 = r.gen_range(-2.0..2.0);
            z[[i, 0]] = v;
            y.push((2.0 * v).sin() + noise_sd * r.sample::<f64, _>(StandardNormal));
        }
        let gp = fit_gp(&z, &y).unwrap();
        let mut sse = 0.0;
        let m = 200;
        for _ in 0..m {
            let v: f64 = r.gen_range(-2.0..2.0);
            let truth = (2.0 * v).sin();
            sse += (gp.predict(&[v]) - truth).powi(2);
        }
        let rmse = (sse / m as f64).sqrt();
        assert!(rmse < 2.0 * noise_sd, "rmse = {rmse}");
    }

    #[test]
    fn cap_enforced() {
        let mut r = rng(44);
        let z = random_inputs(30, 2, &mut r);
        let y = vec![0.0; 30];
        assert!(matches!(
            fit_gp_capped(&z, &y, 10),
            Err(Error::CapacityExceeded { n: 30, cap: 10 })
        ));
    }

    #[test]
    fn affine_equivariance() {
        let mut r = rng(45);
        let z = random_inputs(80, 2, &mut r);
        let y: Vec<f64> = (0..80).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y2: Vec<f64> = y.iter().map(|v| v + 4.0).collect();
        let g0 = fit_gp_fixed(&z, &y, 0.5, 0.1).unwrap();
        let g1 = fit_gp_fixed(&z, &y2, 0.5, 0.1).unwrap();
        assert!((g1.predict(&[0.2, 0.2]) - g0.predict(&[0.2, 0.2]) - 4.0).abs() < 1e-8);
    }

    #[test]
    fn rotation_invariance() {
        let mut r = rng(46);
        let n = 150;
        let pts = random_inputs(n, 2, &mut r);
        let y: Vec<f64> = (0..n)
            .map(|i| (pts[[i, 0]] * 2.0).sin() + pts[[i, 1]])
            .collect();
        let theta = 0.9f64;
        let (c, s) = (theta.cos(), theta.sin());
        let mut rot = Array2::zeros((n, 2));
        for i in 0..n {
            rot[[i, 0]] = c * pts[[i, 0]] - s * pts[[i, 1]];
            rot[[i, 1]] = s * pts[[i, 0]] + c * pts[[i, 1]];
        }
        let g0 = fit_gp_fixed(&pts, &y, 0.7, 0.05).unwrap();
        let g1 = fit_gp_fixed(&rot, &y, 0.7, 0.05).unwrap();
        let q = [0.3, -0.2];
        let qr = [c * q[0] - s * q[1], s * q[0] + c * q[1]];
        assert!((g0.predict(&q) - g1.predict(&qr)).abs() < 1e-8);
    }

    #[test]
    fn plm_recovers_slope_without_confounding() {
        let mut r = rng(47);
        let n = 400;
        let locs = random_inputs(n, 2, &mut r);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let xv: f64 = r.sample::<f64, _>(StandardNormal);
            let g = (locs[[i, 0]] * 3.0).sin() + locs[[i, 1]];
            x.push(xv);
            y.push(2.0 * xv + g + 0.3 * r.sample::<f64, _>(StandardNormal));
        }
        let plm = fit_gp_plm(&locs, &x, &y, None).unwrap();
        assert!((plm.beta - 2.0).abs() < 0.1, "beta = {}", plm.beta);
    }
}
