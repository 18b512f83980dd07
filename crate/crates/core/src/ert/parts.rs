//! One cascade stage: `K` boosting rounds over `P` landmark parts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tree::{fit_tree, RegressionTree, Residuals, TreeData, TreeParams};
use crate::features::SplitParams;
use crate::real::{derive_seed, Real};
use crate::shape::{Point2, Shape};

#[derive(Clone, Debug, PartialEq)]
pub struct PartRegressor<T> {
    pub landmarks: Vec<usize>,
    pub trees: Vec<RegressionTree<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartsStage<T> {
    pub parts: Vec<PartRegressor<T>>,
    pub shrinkage: T,
    pub stage_scale: T,
}

impl<T: Real> PartsStage<T> {
    /// Trees per part.
    pub fn rounds(&self) -> usize {
        self.parts.first().map_or(0, |p| p.trees.len())
    }

    pub fn tree_count(&self) -> usize {
        self.parts.iter().map(|p| p.trees.len()).sum()
    }

    /// Applies every tree in training order. `feature(θ)` must read the
    /// features of the shape this stage started from.
    pub fn apply(&self, shape: &mut Shape<T>, feature: impl Fn(&SplitParams<T>) -> T) {
        let k_total = self.rounds();
        if k_total == 0 {
            return;
        }
        let blend = T::one() / T::from_usize_lossy(k_total);
        for k in 0..k_total {
            for part in &self.parts {
                let leaf = part.trees[k].leaf(&feature);
                update(shape, &part.landmarks, &leaf.residual, &leaf.visibility, self.shrinkage, blend);
            }
        }
    }
}

#[inline]
fn update<T: Real>(shape: &mut Shape<T>, landmarks: &[usize], residual: &[T], vis: &[T], nu: T, blend: T) {
    let keep = T::one() - blend;
    for (j, &l) in landmarks.iter().enumerate() {
        let p = &mut shape.coords[l];
        *p = Point2::new(p.x + nu * residual[2 * j], p.y + nu * residual[2 * j + 1]);
        let v = keep * shape.visibility[l] + blend * vis[j];
        shape.visibility[l] = v.max(T::zero()).min(T::one());
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PartsConfig {
    /// Boosting rounds `K`.
    pub trees: usize,
    pub depth: usize,
    pub candidates: usize,
    pub shrinkage: f64,
    /// Fraction `η` of samples drawn afresh for every tree.
    pub subsample: f64,
    pub pattern_len: usize,
    pub tau_range: (f64, f64),
}

/// Trains one stage. `current` holds the shapes and visibilities the stage
/// starts from and is advanced tree by tree; `feature(i, θ)` reads sample
/// `i`'s frozen stage features.
#[allow(clippy::too_many_arguments)]
pub fn train_parts<T: Real, F>(
    targets: &[Shape<T>],
    current: &mut [Shape<T>],
    feature: &F,
    parts: &[Vec<usize>],
    cfg: &PartsConfig,
    stage_scale: T,
    seed: u64,
) -> PartsStage<T>
where
    F: Fn(usize, &SplitParams<T>) -> T + Sync,
{
    let n = targets.len();
    assert_eq!(n, current.len());
    let nu = T::lit(cfg.shrinkage);
    let blend = if cfg.trees > 0 { T::one() / T::from_usize_lossy(cfg.trees) } else { T::one() };
    let m_draw = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n.max(1));
    let mut regressors: Vec<PartRegressor<T>> =
        parts.iter().map(|lm| PartRegressor { landmarks: lm.clone(), trees: Vec::with_capacity(cfg.trees) }).collect();

    for k in 0..cfg.trees {
        for (p, reg) in regressors.iter_mut().enumerate() {
            let tree_seed = derive_seed(seed, &[k as u64, p as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            let mut rows = rand::seq::index::sample(&mut rng, n, m_draw).into_vec();
            rows.sort_unstable();

            let lms = &reg.landmarks;
            let m = lms.len();
            let mut res = Vec::with_capacity(rows.len() * 2 * m);
            let mut ann = Vec::with_capacity(rows.len() * m);
            let mut vis = Vec::with_capacity(rows.len() * m);
            for &i in &rows {
                let (gt, cur) = (&targets[i], &current[i]);
                for &l in lms {
                    let w = gt.annotated[l];
                    let d = gt.coords[l] - cur.coords[l];
                    if w {
                        res.push(d.x);
                        res.push(d.y);
                    } else {
                        res.push(T::zero());
                        res.push(T::zero());
                    }
                    ann.push(w);
                    vis.push(gt.visibility[l]);
                }
            }
            let data = TreeData { residuals: Residuals::new(&res, 2 * m), annotated: &ann, visibility: &vis, landmarks: lms };
            let params = TreeParams {
                depth: cfg.depth,
                candidates: cfg.candidates,
                pattern_len: cfg.pattern_len,
                tau_range: cfg.tau_range,
                seed: tree_seed,
            };
            let local = |r: usize, t: &SplitParams<T>| feature(rows[r], t);
            let tree = fit_tree(&data, (0..rows.len()).collect(), &params, &local);
            for (i, shape) in current.iter_mut().enumerate() {
                let leaf = tree.leaf(|t| feature(i, t));
                update(shape, lms, &leaf.residual, &leaf.visibility, nu, blend);
            }
            reg.trees.push(tree);
        }
    }
    PartsStage { parts: regressors, shrinkage: nu, stage_scale }
}

/// `Σ_i ‖w_i ⊙ (x^g_i − x_i)‖²` restricted to `landmarks` and `rows`.
pub fn masked_loss<T: Real>(targets: &[Shape<T>], current: &[Shape<T>], landmarks: &[usize], rows: &[usize]) -> T {
    let mut total = T::zero();
    for &i in rows {
        for &l in landmarks {
            if targets[i].annotated[l] {
                let d = targets[i].coords[l] - current[i].coords[l];
                total = total + d.x * d.x + d.y * d.y;
            }
        }
    }
    total
}
