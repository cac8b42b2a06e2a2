//! Penalized radial-basis ridge regression: a thin-plate-style smoother with
//! k centers chosen by farthest-point sampling, an unpenalized affine part,
//! and ridge penalty on the basis coefficients selected by generalized
//! cross-validation.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use ndarray_linalg::{Eigh, InverseH, SolveH, UPLO};

use crate::error::{Error, Result};

/// Ridge penalty on the radial-basis coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// Select lambda by generalized cross-validation on a log grid.
    Gcv,
    Fixed(f64),
}

pub const GCV_GRID_POINTS: usize = 20;

/// Radial kernel: thin-plate analog r^2 log r in 2-D, cubic |r|^3 otherwise.
fn phi(r: f64, dim: usize) -> f64 {
    if dim == 2 {
        if r <= 0.0 {
            0.0
        } else {
            r * r * r.ln()
        }
    } else {
        r * r * r
    }
}

/// Basis centers in standardized coordinates. Standardization centers each
/// dimension and applies a single isotropic scale, so rigid rotations of the
/// inputs carry through to rotations of the basis.
#[derive(Debug, Clone)]
pub struct RadialBasis {
    centers: Array2<f64>,
    shift: Array1<f64>,
    scale: f64,
    dim: usize,
}

impl RadialBasis {
    /// Choose `k` centers by farthest-point sampling: start from the point
    /// farthest from the centroid, then repeatedly add the point farthest
    /// from the current center set. Deterministic; ties broken by index.
    pub fn fit(points: &Array2<f64>, k: usize) -> Result<Self> {
        let n = points.nrows();
        let dim = points.ncols();
        if k < 2 || n < k {
            return Err(Error::InvalidArgument(format!(
                "basis size must satisfy 2 <= k <= n (k = {k}, n = {n})"
            )));
        }
        let shift = points.mean_axis(Axis(0)).unwrap();
        let mut total_var = 0.0;
        for j in 0..dim {
            let col = points.column(j);
            total_var += col.iter().map(|v| (v - shift[j]).powi(2)).sum::<f64>() / n as f64;
        }
        let scale = (total_var / dim as f64).sqrt();
        if scale <= 0.0 {
            return Err(Error::DegenerateDesign);
        }

        let std = {
            let mut z = points.clone();
            for j in 0..dim {
                z.column_mut(j).mapv_inplace(|v| (v - shift[j]) / scale);
            }
            z
        };

        let sq = |a: ArrayView1<f64>, b: ArrayView1<f64>| -> f64 {
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let mut chosen = Vec::with_capacity(k);
        let first = (0..n)
            .max_by(|&i, &j| {
                let di = std.row(i).dot(&std.row(i));
                let dj = std.row(j).dot(&std.row(j));
                di.partial_cmp(&dj).unwrap().then(j.cmp(&i))
            })
            .unwrap();
        chosen.push(first);
        let mut min_d2: Vec<f64> = (0..n).map(|i| sq(std.row(i), std.row(first))).collect();
        while chosen.len() < k {
            let next = (0..n)
                .max_by(|&i, &j| min_d2[i].partial_cmp(&min_d2[j]).unwrap().then(j.cmp(&i)))
                .unwrap();
            chosen.push(next);
            for i in 0..n {
                let d2 = sq(std.row(i), std.row(next));
                if d2 < min_d2[i] {
                    min_d2[i] = d2;
                }
            }
        }

        let mut centers = Array2::zeros((k, dim));
        for (row, &idx) in chosen.iter().enumerate() {
            centers.row_mut(row).assign(&std.row(idx));
        }
        Ok(RadialBasis {
            centers,
            shift,
            scale,
            dim,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn standardize(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(j, v)| (v - self.shift[j]) / self.scale)
            .collect()
    }

    /// Basis matrix (n x k) at raw input points.
    pub fn eval(&self, points: &Array2<f64>) -> Array2<f64> {
        let n = points.nrows();
        let k = self.k();
        let mut out = Array2::zeros((n, k));
        for i in 0..n {
            let z = self.standardize(points.row(i).as_slice().unwrap());
            for c in 0..k {
                let r2: f64 = z
                    .iter()
                    .zip(self.centers.row(c).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                out[[i, c]] = phi(r2.sqrt(), self.dim);
            }
        }
        out
    }

    /// Unpenalized affine columns [1, z_1, .., z_d] in standardized coords.
    pub fn affine(&self, points: &Array2<f64>) -> Array2<f64> {
        let n = points.nrows();
        let mut out = Array2::zeros((n, 1 + self.dim));
        for i in 0..n {
            let z = self.standardize(points.row(i).as_slice().unwrap());
            out[[i, 0]] = 1.0;
            for (j, v) in z.iter().enumerate() {
                out[[i, 1 + j]] = *v;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    /// Coefficients on the unpenalized columns.
    pub alpha: Array1<f64>,
    /// Coefficients on the penalized columns.
    pub beta: Array1<f64>,
    pub lambda: f64,
    pub edf: f64,
    pub gcv: f64,
}

/// Minimize ||y - U a - B b||^2 + lambda ||b||^2. The per-lambda profile is
/// computed from one eigendecomposition of the U-residualized Gram matrix,
/// so the GCV grid costs O(k) per candidate after the decomposition.
pub fn solve_penalized(
    unpen: &Array2<f64>,
    pen: &Array2<f64>,
    y: &Array1<f64>,
    penalty: Penalty,
) -> Result<PenalizedSolution> {
    let n = y.len();
    let p = unpen.ncols();
    let k = pen.ncols();
    if unpen.nrows() != n || pen.nrows() != n {
        return Err(Error::InvalidArgument("design row mismatch".into()));
    }
    if n <= p + 1 {
        return Err(Error::InvalidArgument(
            "need more rows than unpenalized columns".into(),
        ));
    }

    // residualize pen and y against the unpenalized columns
    let utu = unpen.t().dot(unpen);
    let utu = ridge_jitter(utu)?;
    let uty = unpen.t().dot(y);
    let utb = unpen.t().dot(pen);
    let coef_y = utu
        .solveh(&uty)
        .map_err(|e| Error::NumericalFailure(format!("unpenalized solve: {e}")))?;
    let mut coef_b = Array2::zeros((p, k));
    for j in 0..k {
        let c = utu
            .solveh(&utb.column(j).to_owned())
            .map_err(|e| Error::NumericalFailure(format!("unpenalized solve: {e}")))?;
        coef_b.column_mut(j).assign(&c);
    }
    let y_res = y - &unpen.dot(&coef_y);
    let b_res = pen - &unpen.dot(&coef_b);

    let g = b_res.t().dot(&b_res);
    let c = b_res.t().dot(&y_res);

    // fixed penalty: one Cholesky solve instead of the eigendecomposition,
    // which makes penalty-pinned bootstrap refits cheap
    if let Penalty::Fixed(lambda) = penalty {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument("penalty must be positive".into()));
        }
        let mut glam = g;
        for i in 0..k {
            glam[[i, i]] += lambda;
        }
        let beta = glam
            .solveh(&c)
            .map_err(|e| Error::NumericalFailure(format!("penalized solve: {e}")))?;
        let resid = &y_res - &b_res.dot(&beta);
        let rss = resid.dot(&resid);
        let inv = glam
            .invh()
            .map_err(|e| Error::NumericalFailure(format!("penalized inverse: {e}")))?;
        // tr((G + lambda I)^-1 G) = k - lambda tr((G + lambda I)^-1)
        let mut edf = p as f64 + k as f64;
        for i in 0..k {
            edf -= lambda * inv[[i, i]];
        }
        let denom = (n as f64 - edf).max(1.0);
        let gcv = n as f64 * rss / (denom * denom);
        let alpha = &coef_y - &coef_b.dot(&beta);
        return Ok(PenalizedSolution {
            alpha,
            beta,
            lambda,
            edf,
            gcv,
        });
    }

    let (evals, evecs) = g
        .eigh(UPLO::Lower)
        .map_err(|e| Error::NumericalFailure(format!("gram eigendecomposition: {e}")))?;
    let a = evecs.t().dot(&c);
    let yres_norm2 = y_res.dot(&y_res);

    let rss_edf = |lambda: f64| -> (f64, f64) {
        let mut cross = 0.0;
        let mut quad = 0.0;
        let mut edf = p as f64;
        for i in 0..k {
            let d = evals[i].max(0.0);
            let den = d + lambda;
            cross += a[i] * a[i] / den;
            quad += d * a[i] * a[i] / (den * den);
            edf += d / den;
        }
        ((yres_norm2 - 2.0 * cross + quad).max(0.0), edf)
    };

    let lambda = {
        let d_ref = (evals.iter().map(|v| v.max(0.0)).sum::<f64>() / k as f64).max(1e-12);
        let mut best = (f64::INFINITY, d_ref);
        for t in 0..GCV_GRID_POINTS {
            let expo = -8.0 + 10.0 * t as f64 / (GCV_GRID_POINTS - 1) as f64;
            let lam = d_ref * 10f64.powf(expo);
            let (rss, edf) = rss_edf(lam);
            let denom = (n as f64 - edf).max(1.0);
            let gcv = n as f64 * rss / (denom * denom);
            if gcv < best.0 {
                best = (gcv, lam);
            }
        }
        best.1
    };

    let (rss, edf) = rss_edf(lambda);
    let denom = (n as f64 - edf).max(1.0);
    let gcv = n as f64 * rss / (denom * denom);

    let mut beta = Array1::zeros(k);
    for i in 0..k {
        let d = evals[i].max(0.0);
        let w = a[i] / (d + lambda);
        beta.scaled_add(w, &evecs.column(i));
    }
    // back out the unpenalized coefficients on the original columns
    let alpha = &coef_y - &coef_b.dot(&beta);

    Ok(PenalizedSolution {
        alpha,
        beta,
        lambda,
        edf,
        gcv,
    })
}

fn ridge_jitter(mut m: Array2<f64>) -> Result<Array2<f64>> {
    let p = m.nrows();
    let tr = (0..p).map(|i| m[[i, i]]).sum::<f64>();
    let eps = 1e-12 * (tr / p as f64).max(1e-300);
    for i in 0..p {
        m[[i, i]] += eps;
    }
    Ok(m)
}

/// A fitted radial-basis smoother: unpenalized affine part plus penalized
/// basis expansion.
#[derive(Debug, Clone)]
pub struct RbfSmoother {
    pub basis: RadialBasis,
    alpha: Array1<f64>,
    beta: Array1<f64>,
    pub lambda: f64,
    pub edf: f64,
}

pub fn fit_rbf_smoother(
    points: &Array2<f64>,
    y: &[f64],
    k: usize,
    penalty: Penalty,
) -> Result<RbfSmoother> {
    let basis = RadialBasis::fit(points, k)?;
    let b = basis.eval(points);
    let u = basis.affine(points);
    let yv = Array1::from(y.to_vec());
    let sol = solve_penalized(&u, &b, &yv, penalty)?;
    Ok(RbfSmoother {
        basis,
        alpha: sol.alpha,
        beta: sol.beta,
        lambda: sol.lambda,
        edf: sol.edf,
    })
}

impl RbfSmoother {
    pub fn predict(&self, p: &[f64]) -> f64 {
        let z = self.basis.standardize(p);
        let mut out = self.alpha[0];
        for (j, v) in z.iter().enumerate() {
            out += self.alpha[1 + j] * v;
        }
        for (c, w) in self.beta.iter().enumerate() {
            let r2: f64 = z
                .iter()
                .zip(self.basis.centers.row(c).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out += w * phi(r2.sqrt(), self.basis.dim);
        }
        out
    }

    pub fn predict_many(&self, points: &Array2<f64>) -> Vec<f64> {
        let b = self.basis.eval(points);
        let u = self.basis.affine(points);
        let fitted = u.dot(&self.alpha) + b.dot(&self.beta);
        fitted.to_vec()
    }

    pub fn residuals(&self, points: &Array2<f64>, y: &[f64]) -> Vec<f64> {
        self.predict_many(points)
            .iter()
            .zip(y.iter())
            .map(|(f, t)| t - f)
            .collect()
    }
}

/// Convenience: pack column vectors into an n x d design.
pub fn columns_to_design(cols: &[&[f64]]) -> Array2<f64> {
    let n = cols[0].len();
    let mut out = Array2::zeros((n, cols.len()));
    for (j, col) in cols.iter().enumerate() {
        assert_eq!(col.len(), n);
        for i in 0..n {
            out[[i, j]] = col[i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn grid_2d(n_side: usize) -> Array2<f64> {
        let mut pts = Array2::zeros((n_side * n_side, 2));
        for i in 0..n_side {
            for j in 0..n_side {
                pts[[i * n_side + j, 0]] = -1.0 + 2.0 * i as f64 / (n_side - 1) as f64;
                pts[[i * n_side + j, 1]] = -1.0 + 2.0 * j as f64 / (n_side - 1) as f64;
            }
        }
        pts
    }

    #[test]
    fn constant_targets_reproduced() {
        let pts = grid_2d(12);
        let y = vec![3.5; pts.nrows()];
        let fit = fit_rbf_smoother(&pts, &y, 30, Penalty::Gcv).unwrap();
        for p in [[0.0, 0.0], [0.7, -0.3], [2.0, 2.0]] {
            assert!((fit.predict(&p) - 3.5).abs() < 1e-8);
        }
    }

    #[test]
    fn smooth_surface_rmse() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 1000;
        let mut pts = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            pts[[i, 0]] = a;
            pts[[i, 1]] = b;
            y.push((2.0 * std::f64::consts::PI * a * b).sin() + a + b);
        }
        let fit = fit_rbf_smoother(&pts, &y, 200, Penalty::Gcv).unwrap();
        let pred = fit.predict_many(&pts);
        let rmse = (pred
            .iter()
            .zip(y.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rmse < 0.05, "rmse = {rmse}");
    }

    #[test]
    fn infinite_penalty_is_affine_ols() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let n = 300;
        let mut pts = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            pts[[i, 0]] = a;
            pts[[i, 1]] = b;
            y.push(1.0 + 2.0 * a - b + rng.gen_range(-0.1..0.1));
        }
        let fit = fit_rbf_smoother(&pts, &y, 50, Penalty::Fixed(1e12)).unwrap();
        // affine OLS on standardized coords, computed directly
        let basis = &fit.basis;
        let u = basis.affine(&pts);
        let yv = Array1::from(y.clone());
        let coef = u.t().dot(&u).solveh(&u.t().dot(&yv)).unwrap();
        let ols: Vec<f64> = u.dot(&coef).to_vec();
        let pred = fit.predict_many(&pts);
        for i in 0..n {
            assert!((pred[i] - ols[i]).abs() < 1e-4, "i = {i}");
        }
    }

    #[test]
    fn affine_equivariance() {
        let pts = grid_2d(10);
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let y: Vec<f64> = (0..pts.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + 7.0).collect();
        let f0 = fit_rbf_smoother(&pts, &y, 40, Penalty::Fixed(0.5)).unwrap();
        let f1 = fit_rbf_smoother(&pts, &shifted, 40, Penalty::Fixed(0.5)).unwrap();
        for p in [[0.1, 0.2], [-0.8, 0.9]] {
            assert!((f1.predict(&p) - f0.predict(&p) - 7.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let n = 400;
        let mut pts = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            pts[[i, 0]] = a;
            pts[[i, 1]] = b;
            y.push((a * 2.0).sin() + b * b + rng.gen_range(-0.05..0.05));
        }
        let theta = 0.7f64;
        let (c, s) = (theta.cos(), theta.sin());
        let mut rot = Array2::zeros((n, 2));
        for i in 0..n {
            rot[[i, 0]] = c * pts[[i, 0]] - s * pts[[i, 1]];
            rot[[i, 1]] = s * pts[[i, 0]] + c * pts[[i, 1]];
        }
        let f0 = fit_rbf_smoother(&pts, &y, 80, Penalty::Fixed(1.0)).unwrap();
        let f1 = fit_rbf_smoother(&rot, &y, 80, Penalty::Fixed(1.0)).unwrap();
        for q in [[0.3, -0.4], [0.0, 0.9], [-0.6, -0.6]] {
            let qr = [c * q[0] - s * q[1], s * q[0] + c * q[1]];
            assert!(
                (f0.predict(&q) - f1.predict(&qr)).abs() < 1e-8,
                "query {q:?}"
            );
        }
    }

    #[test]
    fn k_larger_than_n_is_error() {
        let pts = grid_2d(3);
        let y = vec![0.0; 9];
        assert!(fit_rbf_smoother(&pts, &y, 20, Penalty::Gcv).is_err());
    }

    #[test]
    fn gcv_tracks_signal_to_noise() {
        // pure noise targets should get a much larger penalty than smooth targets
        let pts = grid_2d(20);
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        let noise: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let smooth: Vec<f64> = (0..400)
            .map(|i| (pts[[i, 0]] * 3.0).sin() * (pts[[i, 1]] * 3.0).cos())
            .collect();
        let fn_ = fit_rbf_smoother(&pts, &noise, 100, Penalty::Gcv).unwrap();
        let fs = fit_rbf_smoother(&pts, &smooth, 100, Penalty::Gcv).unwrap();
        assert!(fs.edf > fn_.edf, "edf smooth {} vs noise {}", fs.edf, fn_.edf);
    }
}
