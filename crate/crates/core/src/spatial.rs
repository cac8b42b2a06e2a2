//! Spatial primitives: location sampling on the unit square, distance
//! geometry, compactly supported moving-average random fields, and the
//! block splits used for spatial cross-fitting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular domain for locations. All simulation scenarios use [-1,1]^2.
pub const DOMAIN_MIN: f64 = -1.0;
pub const DOMAIN_MAX: f64 = 1.0;

/// Diameter of the [-1,1]^2 square.
pub fn domain_diameter() -> f64 {
    2.0 * std::f64::consts::SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Euclidean distance between two points.
pub fn pairwise_distance(a: &Point, b: &Point) -> f64 {
    a.dist(b)
}

/// A set of 2-D locations inside the declared domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationSet {
    points: Vec<Point>,
}

impl LocationSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("location set must be non-empty".into()));
        }
        for p in &points {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::InvalidArgument("non-finite coordinate".into()));
            }
            if p.x < DOMAIN_MIN || p.x > DOMAIN_MAX || p.y < DOMAIN_MIN || p.y > DOMAIN_MAX {
                return Err(Error::InvalidArgument(format!(
                    "point ({}, {}) outside domain [{}, {}]^2",
                    p.x, p.y, DOMAIN_MIN, DOMAIN_MAX
                )));
            }
        }
        Ok(LocationSet { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    /// Subset by index; indices must be valid.
    pub fn subset(&self, idx: &[usize]) -> LocationSet {
        LocationSet {
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

/// Draw `n` i.i.d. uniform locations on [-1,1]^2.
pub fn sample_locations<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<LocationSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let points = (0..n)
        .map(|_| {
            // draw in a fixed coordinate order so the stream is reproducible
            let x = rng.gen_range(DOMAIN_MIN..=DOMAIN_MAX);
            let y = rng.gen_range(DOMAIN_MIN..=DOMAIN_MAX);
            Point::new(x, y)
        })
        .collect();
    LocationSet::new(points)
}

/// A realized locally covariant random field: one value per location, with
/// covariance exactly zero between locations more than `kernel_radius` apart.
#[derive(Debug, Clone)]
pub struct LocalField {
    pub values: Vec<f64>,
    pub kernel_radius: f64,
}

/// Default latent-noise grid resolution (cells per axis over the domain).
pub const DEFAULT_FIELD_RESOLUTION: usize = 200;

/// Generate a moving-average field: white noise on a dense grid convolved
/// with a quartic (biweight) bump of support radius `kernel_radius / 2`.
/// Two locations farther than `kernel_radius` apart share no noise cells,
/// so their covariance is exactly zero.
pub fn moving_average_field<R: Rng + ?Sized>(
    locs: &LocationSet,
    kernel_radius: f64,
    noise_sd: f64,
    rng: &mut R,
) -> Result<LocalField> {
    moving_average_field_with_resolution(locs, kernel_radius, noise_sd, DEFAULT_FIELD_RESOLUTION, rng)
}

pub fn moving_average_field_with_resolution<R: Rng + ?Sized>(
    locs: &LocationSet,
    kernel_radius: f64,
    noise_sd: f64,
    resolution: usize,
    rng: &mut R,
) -> Result<LocalField> {
    if kernel_radius <= 0.0 {
        return Err(Error::InvalidArgument("kernel_radius must be positive".into()));
    }
    let support = kernel_radius / 2.0;
    let cell = (DOMAIN_MAX - DOMAIN_MIN) / resolution as f64;
    if kernel_radius / cell < 10.0 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution {} too coarse for kernel_radius {}: need at least 10 cells per kernel radius",
            resolution, kernel_radius
        )));
    }

    // Extend the grid past the domain by the kernel support so every location
    // sees a full kernel neighborhood and values are identically distributed.
    let lo = DOMAIN_MIN - support;
    let hi = DOMAIN_MAX + support;
    let cells = ((hi - lo) / cell).ceil() as usize;
    let mut noise = vec![0.0f64; cells * cells];
    for w in noise.iter_mut() {
        *w = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }

    // Normalizer so the marginal SD of the field equals noise_sd.
    let reach = (support / cell).ceil() as i64;
    let mut sum_sq = 0.0;
    for di in -reach..=reach {
        for dj in -reach..=reach {
            let d = cell * ((di * di + dj * dj) as f64).sqrt();
            let k = biweight(d, support);
            sum_sq += k * k;
        }
    }
    let norm = sum_sq.sqrt();

    let values = locs
        .points()
        .iter()
        .map(|p| {
            let ci = ((p.x - lo) / cell).floor() as i64;
            let cj = ((p.y - lo) / cell).floor() as i64;
            let mut acc = 0.0;
            for di in -reach..=reach {
                for dj in -reach..=reach {
                    let gi = ci + di;
                    let gj = cj + dj;
                    if gi < 0 || gj < 0 || gi as usize >= cells || gj as usize >= cells {
                        continue;
                    }
                    // distance from the location to the cell's center
                    let cx = lo + (gi as f64 + 0.5) * cell;
                    let cy = lo + (gj as f64 + 0.5) * cell;
                    let dx = p.x - cx;
                    let dy = p.y - cy;
                    let d = (dx * dx + dy * dy).sqrt();
                    let k = biweight(d, support);
                    if k > 0.0 {
                        acc += k * noise[gi as usize * cells + gj as usize];
                    }
                }
            }
            noise_sd * acc / norm
        })
        .collect();

    Ok(LocalField {
        values,
        kernel_radius,
    })
}

/// Quartic (biweight) bump, compactly supported on [0, support).
fn biweight(d: f64, support: f64) -> f64 {
    if d >= support {
        0.0
    } else {
        let u = d / support;
        let t = 1.0 - u * u;
        t * t
    }
}

/// One spatial block split: nuisances are fit on `fit_indices` (the ball M of
/// radius q around a random seed point) and the estimator is evaluated on
/// `eval_indices` (all points at distance >= r from every point of M).
#[derive(Debug, Clone)]
pub struct BlockSplit {
    pub fit_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
    pub seed_point_index: usize,
    pub q: f64,
    pub r: f64,
}

const MAX_SEED_ATTEMPTS: usize = 50;

/// Draw a spatial block split. Resamples the seed point up to 50 times if the
/// evaluation set comes out empty, then reports a degenerate split.
pub fn spatial_block_split<R: Rng + ?Sized>(
    locs: &LocationSet,
    q: f64,
    r: f64,
    rng: &mut R,
) -> Result<BlockSplit> {
    if q <= 0.0 {
        return Err(Error::InvalidArgument("q must be positive".into()));
    }
    if r < 0.0 {
        return Err(Error::InvalidArgument("r must be nonnegative".into()));
    }
    let n = locs.len();
    let pts = locs.points();
    for attempt in 1..=MAX_SEED_ATTEMPTS {
        let seed = rng.gen_range(0..n);
        let seed_pt = pts[seed];
        let fit_indices: Vec<usize> = (0..n).filter(|&i| pts[i].dist(&seed_pt) <= q).collect();
        let eval_indices: Vec<usize> = (0..n)
            .filter(|&j| {
                !fit_indices.contains(&j)
                    && fit_indices.iter().all(|&i| pts[i].dist(&pts[j]) >= r)
            })
            .collect();
        if !eval_indices.is_empty() {
            return Ok(BlockSplit {
                fit_indices,
                eval_indices,
                seed_point_index: seed,
                q,
                r,
            });
        }
        if attempt == MAX_SEED_ATTEMPTS {
            break;
        }
    }
    Err(Error::DegenerateSplit {
        attempts: MAX_SEED_ATTEMPTS,
    })
}

impl BlockSplit {
    /// Brute-force check of the split geometry: disjointness, ball containment,
    /// and the minimum cross-set distance.
    pub fn verify(&self, locs: &LocationSet) -> bool {
        let pts = locs.points();
        let seed = pts[self.seed_point_index];
        let disjoint = self
            .fit_indices
            .iter()
            .all(|i| !self.eval_indices.contains(i));
        let in_ball = self.fit_indices.iter().all(|&i| pts[i].dist(&seed) <= self.q);
        let separated = self.fit_indices.iter().all(|&i| {
            self.eval_indices
                .iter()
                .all(|&j| pts[i].dist(&pts[j]) >= self.r)
        });
        disjoint && in_ball && separated
    }

    /// Minimum distance between the fit and eval sets (infinity if either is empty).
    pub fn min_cross_distance(&self, locs: &LocationSet) -> f64 {
        let pts = locs.points();
        let mut min = f64::INFINITY;
        for &i in &self.fit_indices {
            for &j in &self.eval_indices {
                let d = pts[i].dist(&pts[j]);
                if d < min {
                    min = d;
                }
            }
        }
        min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn sample_locations_in_domain() {
        let locs = sample_locations(4, &mut rng(1)).unwrap();
        assert_eq!(locs.len(), 4);
        for p in locs.points() {
            assert!(p.x >= -1.0 && p.x <= 1.0);
            assert!(p.y >= -1.0 && p.y <= 1.0);
        }
    }

    #[test]
    fn sample_locations_deterministic() {
        let a = sample_locations(1000, &mut rng(7)).unwrap();
        let b = sample_locations(1000, &mut rng(7)).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn sample_locations_mean_near_zero() {
        // CLT bound: 3/sqrt(n) for Unif(-1,1) has sd 1/sqrt(3), so 0.02 at n=1e5
        let n = 100_000;
        let locs = sample_locations(n, &mut rng(13)).unwrap();
        let mx: f64 = locs.points().iter().map(|p| p.x).sum::<f64>() / n as f64;
        let my: f64 = locs.points().iter().map(|p| p.y).sum::<f64>() / n as f64;
        assert!(mx.abs() < 0.02, "mean x = {mx}");
        assert!(my.abs() < 0.02, "mean y = {my}");
    }

    #[test]
    fn sample_locations_zero_is_error() {
        assert!(matches!(
            sample_locations(0, &mut rng(1)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn distance_identity_and_pythagoras() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(pairwise_distance(&o, &o), 0.0);
        let p = Point::new(0.3, 0.4);
        assert!((pairwise_distance(&o, &p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn distance_symmetric() {
        let mut r = rng(3);
        for _ in 0..50 {
            let a = Point::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let b = Point::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            assert_eq!(pairwise_distance(&a, &b), pairwise_distance(&b, &a));
        }
    }

    #[test]
    fn field_zero_noise_is_zero() {
        let locs = sample_locations(20, &mut rng(5)).unwrap();
        let f = moving_average_field(&locs, 0.2, 0.0, &mut rng(6)).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn field_same_location_same_value() {
        let locs = LocationSet::new(vec![Point::new(0.1, 0.2), Point::new(0.1, 0.2)]).unwrap();
        let f = moving_average_field(&locs, 0.2, 1.0, &mut rng(8)).unwrap();
        assert_eq!(f.values[0], f.values[1]);
    }

    #[test]
    fn field_uncorrelated_beyond_kernel_radius() {
        // two locations at 2 * kernel_radius, 1e4 draws: |corr| < 0.05
        let radius = 0.2;
        let locs =
            LocationSet::new(vec![Point::new(-0.3, 0.0), Point::new(0.1, 0.0)]).unwrap();
        let mut r = rng(11);
        let n = 10_000;
        let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let f = moving_average_field_with_resolution(&locs, radius, 1.0, 100, &mut r).unwrap();
            let (a, b) = (f.values[0], f.values[1]);
            sa += a;
            sb += b;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let va = saa / nf - (sa / nf).powi(2);
        let vb = sbb / nf - (sb / nf).powi(2);
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.05, "corr = {corr}");
    }

    #[test]
    fn field_correlated_within_kernel_radius() {
        let radius = 0.4;
        let locs =
            LocationSet::new(vec![Point::new(0.0, 0.0), Point::new(0.05, 0.0)]).unwrap();
        let mut r = rng(12);
        let n = 2_000;
        let mut sab = 0.0;
        for _ in 0..n {
            let f = moving_average_field_with_resolution(&locs, radius, 1.0, 100, &mut r).unwrap();
            sab += f.values[0] * f.values[1];
        }
        assert!(sab / n as f64 > 0.5, "nearby values should correlate");
    }

    #[test]
    fn field_nonpositive_radius_is_error() {
        let locs = sample_locations(5, &mut rng(1)).unwrap();
        assert!(moving_average_field(&locs, 0.0, 1.0, &mut rng(2)).is_err());
    }

    #[test]
    fn block_split_r_zero_is_complement() {
        let locs = sample_locations(200, &mut rng(21)).unwrap();
        let split = spatial_block_split(&locs, 0.5, 0.0, &mut rng(22)).unwrap();
        let mut all: Vec<usize> = split
            .fit_indices
            .iter()
            .chain(split.eval_indices.iter())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn block_split_covering_ball_is_degenerate() {
        let locs = sample_locations(50, &mut rng(23)).unwrap();
        let q = domain_diameter();
        assert!(matches!(
            spatial_block_split(&locs, q, 0.1, &mut rng(24)),
            Err(Error::DegenerateSplit { .. })
        ));
    }

    #[test]
    fn block_split_geometry_verified_by_brute_force() {
        let locs = sample_locations(400, &mut rng(25)).unwrap();
        for seed in 0..20 {
            let split = spatial_block_split(&locs, 0.4, 0.15, &mut rng(seed)).unwrap();
            assert!(split.verify(&locs));
            assert!(split.min_cross_distance(&locs) >= 0.15);
        }
    }
}
