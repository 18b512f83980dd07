#![allow(dead_code, clippy::needless_range_loop)]

use ertalign::features::SplitParams;
use ertalign::pose::{Camera, RigidPose};
use ertalign::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random node-fitting problem small enough for exhaustive search.
pub struct SplitInstance {
    pub residuals: Vec<f64>,
    pub dim: usize,
    pub samples: Vec<usize>,
    pub candidates: Vec<SplitParams<f64>>,
    /// `features[row * candidates + c]`.
    pub features: Vec<f64>,
}

impl SplitInstance {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let rows = r.random_range(2..=32usize);
        let landmarks = r.random_range(1..=10usize);
        let dim = 2 * landmarks;
        let n_cand = r.random_range(1..=16usize);
        // Coarse value grids make exact ties common.
        let residuals = (0..rows * dim).map(|_| r.random_range(-4..=4) as f64 * 0.5).collect();
        let mut samples: Vec<usize> = (0..rows).filter(|_| r.random::<f64>() < 0.8).collect();
        if samples.len() < 2 {
            samples = vec![0, rows - 1];
        }
        let candidates = (0..n_cand)
            .map(|_| SplitParams {
                tau: [-0.15, -0.05, 0.05, 0.15][r.random_range(0..4)],
                p1: 0,
                p2: 1,
                landmark: r.random_range(0..landmarks),
            })
            .collect();
        let features = (0..rows * n_cand).map(|_| r.random_range(-2..=2) as f64 * 0.1).collect();
        SplitInstance { residuals, dim, samples, candidates, features }
    }

    pub fn feature(&self, row: usize, c: usize) -> f64 {
        self.features[row * self.candidates.len() + c]
    }
}

fn sse(inst: &SplitInstance, set: &[usize]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let mut mean = vec![0.0; inst.dim];
    for &s in set {
        for d in 0..inst.dim {
            mean[d] += inst.residuals[s * inst.dim + d];
        }
    }
    for m in mean.iter_mut() {
        *m /= set.len() as f64;
    }
    let mut total = 0.0;
    for &s in set {
        let mut sq = 0.0;
        for d in 0..inst.dim {
            let e = inst.residuals[s * inst.dim + d] - mean[d];
            sq += e * e;
        }
        total += sq;
    }
    total
}

/// Exhaustive minimum over the candidate list; the first minimum wins.
pub fn brute_force_split(inst: &SplitInstance) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for c in 0..inst.candidates.len() {
        let tau = inst.candidates[c].tau;
        let left: Vec<usize> = inst.samples.iter().copied().filter(|&s| inst.feature(s, c) <= tau).collect();
        let right: Vec<usize> = inst.samples.iter().copied().filter(|&s| inst.feature(s, c) > tau).collect();
        let cost = sse(inst, &left) + sse(inst, &right);
        if cost < best.1 {
            best = (c, cost);
        }
    }
    best
}

/// Uniform Euler angles within the given bounds (degrees).
pub fn random_pose(r: &mut ChaCha8Rng, yaw: f64, pitch: f64, roll: f64, camera: Camera<f64>) -> RigidPose<f64> {
    let mut sym = |b: f64| (b * (2.0 * r.random::<f64>() - 1.0)).to_radians();
    let (y, p, ro) = (sym(yaw), sym(pitch), sym(roll));
    let t = [r.random_range(-5.0..5.0), r.random_range(-15.0..-5.0), r.random_range(1300.0..1700.0)];
    RigidPose::from_euler(y, p, ro, t, camera)
}

pub fn mean_distance(a: &[Point2<f64>], b: &[Point2<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.distance(q)).sum::<f64>() / a.len() as f64
}
