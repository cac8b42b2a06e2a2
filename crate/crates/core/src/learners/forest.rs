//! Bagged regression trees: bootstrap-sampled CART with one randomly chosen
//! candidate feature per split. Deterministic given the seed; trees build in
//! parallel on independent RNG substreams.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_TREES: usize = 500;
pub const DEFAULT_LEAF_MIN: usize = 5;

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
}

/// Best SSE split of `idx` on `feature`, honoring the leaf minimum on both
/// sides. Returns (threshold, sse_reduction).
fn best_split_on_feature(
    xs: &Array2<f64>,
    y: &[f64],
    idx: &mut [usize],
    feature: usize,
    leaf_min: usize,
) -> Option<(f64, f64)> {
    let m = idx.len();
    idx.sort_unstable_by(|&a, &b| {
        xs[[a, feature]]
            .partial_cmp(&xs[[b, feature]])
            .unwrap()
            .then(a.cmp(&b))
    });
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
    let parent_sse = total_sq - total * total / m as f64;

    let mut left_sum = 0.0;
    let mut left_sq = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for pos in 0..m - 1 {
        let yi = y[idx[pos]];
        left_sum += yi;
        left_sq += yi * yi;
        let nl = pos + 1;
        let nr = m - nl;
        if nl < leaf_min || nr < leaf_min {
            continue;
        }
        let xv = xs[[idx[pos], feature]];
        let xn = xs[[idx[pos + 1], feature]];
        if xv == xn {
            continue; // can't split between equal values
        }
        let right_sum = total - left_sum;
        let right_sq = total_sq - left_sq;
        let sse = (left_sq - left_sum * left_sum / nl as f64)
            + (right_sq - right_sum * right_sum / nr as f64);
        let gain = parent_sse - sse;
        if gain > 1e-12 && best.map_or(true, |(_, g)| gain > g) {
            best = Some((0.5 * (xv + xn), gain));
        }
    }
    best
}

fn build_node(
    xs: &Array2<f64>,
    y: &[f64],
    idx: &mut [usize],
    leaf_min: usize,
    rng: &mut ChaCha12Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let m = idx.len();
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / m as f64;
    if m < 2 * leaf_min {
        nodes.push(Node::Leaf(mean));
        return nodes.len() - 1;
    }
    // one random candidate feature; fall back to the others only when it
    // offers no valid split
    let p = xs.ncols();
    let start = rng.gen_range(0..p);
    let mut chosen = None;
    for off in 0..p {
        let feature = (start + off) % p;
        if let Some((threshold, _)) = best_split_on_feature(xs, y, idx, feature, leaf_min) {
            chosen = Some((feature, threshold));
            break;
        }
    }
    let Some((feature, threshold)) = chosen else {
        nodes.push(Node::Leaf(mean));
        return nodes.len() - 1;
    };
    let mut split_at = 0;
    for i in 0..m {
        if xs[[idx[i], feature]] <= threshold {
            idx.swap(i, split_at);
            split_at += 1;
        }
    }
    let slot = nodes.len();
    nodes.push(Node::Leaf(mean)); // placeholder, patched below
    let (li, ri) = idx.split_at_mut(split_at);
    let left = build_node(xs, y, li, leaf_min, rng, nodes);
    let right = build_node(xs, y, ri, leaf_min, rng, nodes);
    nodes[slot] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    slot
}

pub fn fit_forest(
    inputs: &Array2<f64>,
    y: &[f64],
    trees: usize,
    leaf_min: usize,
    seed: u64,
) -> Result<Forest> {
    let n = inputs.nrows();
    if n != y.len() {
        return Err(Error::InvalidArgument("input/target length mismatch".into()));
    }
    // leaf_min = n is allowed (degenerate single-leaf trees)
    if leaf_min == 0 || n < 2 || n < leaf_min {
        return Err(Error::InvalidArgument(format!(
            "forest needs 1 <= leaf_min <= n and n >= 2 (n = {n}, leaf_min = {leaf_min})"
        )));
    }
    if trees == 0 {
        return Err(Error::InvalidArgument("need at least one tree".into()));
    }
    let mut seeder = ChaCha12Rng::seed_from_u64(seed);
    let tree_seeds: Vec<u64> = (0..trees).map(|_| seeder.gen()).collect();
    let built: Vec<Tree> = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha12Rng::seed_from_u64(s);
            let mut idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut nodes = Vec::new();
            build_node(inputs, y, &mut idx, leaf_min, &mut rng, &mut nodes);
            Tree { nodes }
        })
        .collect();
    Ok(Forest {
        trees: built,
        n_features: inputs.ncols(),
    })
}

impl Forest {
    pub fn predict(&self, row: &[f64]) -> f64 {
        assert_eq!(row.len(), self.n_features);
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_many(&self, inputs: &Array2<f64>) -> Vec<f64> {
        (0..inputs.nrows())
            .map(|i| self.predict(inputs.row(i).as_slice().unwrap()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_leaf_predicts_mean() {
        let mut r = rng(51);
        let n = 50;
        let mut xs = Array2::zeros((n, 2));
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        for i in 0..n {
            xs[[i, 0]] = r.gen_range(-1.0..1.0);
            xs[[i, 1]] = r.gen_range(-1.0..1.0);
        }
        let f = fit_forest(&xs, &y, 20, n, 7).unwrap();
        // leaf_min = n forces every tree to a single leaf over its bootstrap
        // sample; averaging over many trees approaches the sample mean
        let ybar = y.iter().sum::<f64>() / n as f64;
        assert!((f.predict(&[0.0, 0.0]) - ybar).abs() < 0.1);
    }

    #[test]
    fn step_function_recovered() {
        let mut r = rng(52);
        let n = 2000;
        let mut xs = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a = r.gen_range(-1.0..1.0);
            let b = r.gen_range(-1.0..1.0);
            xs[[i, 0]] = a;
            xs[[i, 1]] = b;
            y.push(if a > 0.0 { 1.0 } else { 0.0 });
        }
        let f = fit_forest(&xs, &y, 200, DEFAULT_LEAF_MIN, 8).unwrap();
        let mut wrong = 0;
        let m = 1000;
        for _ in 0..m {
            let a = r.gen_range(-1.0..1.0);
            let b = r.gen_range(-1.0..1.0);
            let truth = if a > 0.0 { 1.0 } else { 0.0 };
            if (f.predict(&[a, b]) - truth).abs() > 0.5 {
                wrong += 1;
            }
        }
        assert!(
            (wrong as f64) < 0.05 * m as f64,
            "misclassified {wrong} of {m}"
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let mut r = rng(53);
        let n = 300;
        let mut xs = Array2::zeros((n, 3));
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        for i in 0..n {
            for j in 0..3 {
                xs[[i, j]] = r.gen_range(-1.0..1.0);
            }
        }
        let f1 = fit_forest(&xs, &y, 50, DEFAULT_LEAF_MIN, 99).unwrap();
        let f2 = fit_forest(&xs, &y, 50, DEFAULT_LEAF_MIN, 99).unwrap();
        for q in [[0.1, 0.2, 0.3], [-0.5, 0.5, 0.0]] {
            assert_eq!(f1.predict(&q), f2.predict(&q));
        }
    }

    #[test]
    fn affine_equivariance_given_seed() {
        let mut r = rng(54);
        let n = 400;
        let mut xs = Array2::zeros((n, 2));
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        for i in 0..n {
            xs[[i, 0]] = r.gen_range(-1.0..1.0);
            xs[[i, 1]] = r.gen_range(-1.0..1.0);
        }
        let y2: Vec<f64> = y.iter().map(|v| v + 3.0).collect();
        let f1 = fit_forest(&xs, &y, 50, DEFAULT_LEAF_MIN, 11).unwrap();
        let f2 = fit_forest(&xs, &y2, 50, DEFAULT_LEAF_MIN, 11).unwrap();
        // identical split structure (targets shifted, SSE gains unchanged),
        // so predictions shift exactly
        for q in [[0.0, 0.0], [0.6, -0.6]] {
            assert!((f2.predict(&q) - f1.predict(&q) - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_undersized_sample() {
        let xs = Array2::zeros((4, 1));
        let y = vec![0.0; 4];
        assert!(fit_forest(&xs, &y, 10, 5, 1).is_err());
    }
}
