//! Regression trees over masked residual vectors.

use rayon::prelude::*;

use crate::features::{gen_candidates, SplitParams};
use crate::real::{derive_seed, Real};

/// Row-major residual vectors of dimension `dim`, one row per sample.
#[derive(Clone, Copy, Debug)]
pub struct Residuals<'a, T> {
    pub data: &'a [T],
    pub dim: usize,
}

impl<'a, T: Real> Residuals<'a, T> {
    pub fn new(data: &'a [T], dim: usize) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        Residuals { data, dim }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }
}

/// `Σ_s ‖r_s − μ‖²` with `μ` the mean over `samples`, both accumulated in
/// sample order. Zero for an empty set.
pub fn sum_squared_error<T: Real>(res: &Residuals<'_, T>, samples: &[usize]) -> T {
    if samples.is_empty() {
        return T::zero();
    }
    let mut mean = vec![T::zero(); res.dim];
    for &s in samples {
        for (m, r) in mean.iter_mut().zip(res.row(s)) {
            *m = *m + *r;
        }
    }
    let n = T::from_usize_lossy(samples.len());
    for m in mean.iter_mut() {
        *m = *m / n;
    }
    let mut total = T::zero();
    for &s in samples {
        let mut sq = T::zero();
        for (m, r) in mean.iter().zip(res.row(s)) {
            let d = *r - *m;
            sq = sq + d * d;
        }
        total = total + sq;
    }
    total
}

/// Samples sent left (`f <= τ`) and right (`f > τ`), order preserved.
pub fn partition<T: Real>(samples: &[usize], tau: T, feature: impl Fn(usize) -> T) -> (Vec<usize>, Vec<usize>) {
    samples.iter().partition(|&&s| !(feature(s) > tau))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSplit {
    /// Index of the winning candidate.
    pub best: usize,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

/// Best split of `samples` among `candidates`.
///
/// Every candidate is screened with `Σ‖r‖² − ‖S_l‖²/n_l − ‖S_r‖²/n_r`;
/// the ones within rounding distance of the best are re-scored with the
/// direct two-sided [`sum_squared_error`] and the strict minimum wins, so the
/// lowest index breaks exact ties. Returns the split and its direct cost.
pub fn fit_node<T: Real, F>(
    res: &Residuals<'_, T>,
    samples: &[usize],
    candidates: &[SplitParams<T>],
    feature: F,
) -> (NodeSplit, T)
where
    F: Fn(usize, usize) -> T + Sync,
{
    assert!(!candidates.is_empty());
    let dim = res.dim;
    let mut total = vec![T::zero(); dim];
    let mut sumsq = T::zero();
    for &s in samples {
        for (t, r) in total.iter_mut().zip(res.row(s)) {
            *t = *t + *r;
            sumsq = sumsq + *r * *r;
        }
    }
    let n = samples.len();
    let screened: Vec<T> = (0..candidates.len())
        .into_par_iter()
        .map(|c| {
            let tau = candidates[c].tau;
            let mut right = vec![T::zero(); dim];
            let mut n_r = 0usize;
            for &s in samples {
                if feature(s, c) > tau {
                    n_r += 1;
                    for (a, r) in right.iter_mut().zip(res.row(s)) {
                        *a = *a + *r;
                    }
                }
            }
            let n_l = n - n_r;
            let mut gain = T::zero();
            if n_r > 0 {
                gain = gain + right.iter().map(|v| *v * *v).sum::<T>() / T::from_usize_lossy(n_r);
            }
            if n_l > 0 {
                let left: T = total.iter().zip(&right).map(|(t, r)| (*t - *r) * (*t - *r)).sum();
                gain = gain + left / T::from_usize_lossy(n_l);
            }
            sumsq - gain
        })
        .collect();

    let floor = screened.iter().copied().fold(T::infinity(), T::min);
    let tol = T::epsilon().sqrt() * (sumsq + T::one()) * T::lit(4.0);
    let mut best: Option<(T, usize, Vec<usize>, Vec<usize>)> = None;
    for (c, cost) in screened.iter().enumerate() {
        if !(*cost <= floor + tol) {
            continue;
        }
        let (left, right) = partition(samples, candidates[c].tau, |s| feature(s, c));
        let direct = sum_squared_error(res, &left) + sum_squared_error(res, &right);
        if best.as_ref().is_none_or(|b| direct < b.0) {
            best = Some((direct, c, left, right));
        }
    }
    let (cost, best, left, right) = best.expect("the screened minimum is always re-scored");
    (NodeSplit { best, left, right }, cost)
}

/// Per-landmark leaf output: residual mean over annotated samples and mean
/// ground-truth visibility.
#[derive(Clone, Debug, PartialEq)]
pub struct Leaf<T> {
    /// `2·m` values, `(dx, dy)` per part landmark.
    pub residual: Vec<T>,
    /// `m` values in `[0,1]`.
    pub visibility: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node<T> {
    Split { theta: SplitParams<T>, left: u32, right: u32 },
    Leaf(Leaf<T>),
}

/// Binary tree stored as a flat node arena; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Real> RegressionTree<T> {
    /// Leaf reached by a sample whose feature for `θ` is `feature(θ)`.
    #[inline]
    pub fn leaf(&self, feature: impl Fn(&SplitParams<T>) -> T) -> &Leaf<T> {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf(l) => return l,
                Node::Split { theta, left, right } => {
                    i = if feature(theta) > theta.tau { *right } else { *left } as usize;
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left as usize).max(go(nodes, *right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn split_landmarks(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { theta, .. } => Some(theta.landmark),
            Node::Leaf(_) => None,
        })
    }
}

/// Training inputs of one tree. Rows are indexed by local sample ids.
pub struct TreeData<'a, T> {
    pub residuals: Residuals<'a, T>,
    /// `m` flags per row.
    pub annotated: &'a [bool],
    /// `m` ground-truth visibilities per row.
    pub visibility: &'a [T],
    /// Landmarks of the part, global ids; `m = landmarks.len()`.
    pub landmarks: &'a [usize],
}

#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    pub depth: usize,
    pub candidates: usize,
    pub pattern_len: usize,
    pub tau_range: (f64, f64),
    pub seed: u64,
}

/// Grows a tree on `samples` (local row ids). `feature(row, θ)` reads the
/// shape-indexed feature of a row.
pub fn fit_tree<T: Real, F>(data: &TreeData<'_, T>, samples: Vec<usize>, params: &TreeParams, feature: &F) -> RegressionTree<T>
where
    F: Fn(usize, &SplitParams<T>) -> T + Sync,
{
    let mut nodes = Vec::new();
    grow(data, samples, params, feature, 0, &mut nodes);
    RegressionTree { nodes }
}

fn grow<T: Real, F>(
    data: &TreeData<'_, T>,
    samples: Vec<usize>,
    params: &TreeParams,
    feature: &F,
    level: usize,
    nodes: &mut Vec<Node<T>>,
) -> u32
where
    F: Fn(usize, &SplitParams<T>) -> T + Sync,
{
    let id = nodes.len();
    nodes.push(Node::Leaf(Leaf { residual: Vec::new(), visibility: Vec::new() }));
    if level < params.depth && samples.len() >= 2 && params.candidates > 0 {
        let cands: Vec<SplitParams<T>> = gen_candidates(
            params.candidates,
            data.landmarks,
            params.pattern_len,
            params.tau_range,
            derive_seed(params.seed, &[id as u64]),
        );
        let parent = sum_squared_error(&data.residuals, &samples);
        let (split, cost) = fit_node(&data.residuals, &samples, &cands, |s, c| feature(s, &cands[c]));
        if cost < parent {
            let theta = cands[split.best];
            let left = grow(data, split.left, params, feature, level + 1, nodes);
            let right = grow(data, split.right, params, feature, level + 1, nodes);
            nodes[id] = Node::Split { theta, left, right };
            return id as u32;
        }
    }
    nodes[id] = Node::Leaf(make_leaf(data, &samples));
    id as u32
}

fn make_leaf<T: Real>(data: &TreeData<'_, T>, samples: &[usize]) -> Leaf<T> {
    let m = data.landmarks.len();
    let mut residual = vec![T::zero(); 2 * m];
    let mut visibility = vec![T::zero(); m];
    let mut counts = vec![0usize; m];
    for &s in samples {
        let row = data.residuals.row(s);
        for j in 0..m {
            if data.annotated[s * m + j] {
                residual[2 * j] = residual[2 * j] + row[2 * j];
                residual[2 * j + 1] = residual[2 * j + 1] + row[2 * j + 1];
                visibility[j] = visibility[j] + data.visibility[s * m + j];
                counts[j] += 1;
            }
        }
    }
    for j in 0..m {
        if counts[j] > 0 {
            let c = T::from_usize_lossy(counts[j]);
            residual[2 * j] = residual[2 * j] / c;
            residual[2 * j + 1] = residual[2 * j + 1] / c;
            visibility[j] = (visibility[j] / c).max(T::zero()).min(T::one());
        } else {
            visibility[j] = T::one();
        }
    }
    Leaf { residual, visibility }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(tau: f64) -> SplitParams<f64> {
        SplitParams { tau, p1: 0, p2: 1, landmark: 0 }
    }

    #[test]
    fn single_candidate_is_chosen() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let res = Residuals::new(&r, 1);
        let feats = [0.1, 0.5, 0.9, 0.2];
        let (split, _) = fit_node(&res, &[0, 1, 2, 3], &[theta(0.3)], |s, _| feats[s]);
        assert_eq!(split.best, 0);
        assert_eq!((split.left, split.right), (vec![0, 3], vec![1, 2]));
    }

    #[test]
    fn perfect_split_has_zero_cost() {
        let r = [1.0, -1.0, -1.0, 1.0];
        let res = Residuals::new(&r, 2);
        let feats = [[0.0, 0.0], [0.0, 1.0]];
        let (split, cost) = fit_node(&res, &[0, 1], &[theta(0.5), theta(0.5)], |s, c| feats[c][s]);
        assert_eq!(split.best, 1);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn one_sided_split_is_legal() {
        let r = [1.0, 3.0];
        let res = Residuals::new(&r, 1);
        let (split, cost) = fit_node(&res, &[0, 1], &[theta(10.0)], |_, _| 0.0);
        assert_eq!(split.right, Vec::<usize>::new());
        assert_eq!(cost, 2.0);
    }

    fn data_for<'a>(r: &'a [f64], ann: &'a [bool], vis: &'a [f64], lms: &'a [usize]) -> TreeData<'a, f64> {
        TreeData { residuals: Residuals::new(r, 2 * lms.len()), annotated: ann, visibility: vis, landmarks: lms }
    }

    #[test]
    fn identical_residuals_give_that_residual_everywhere() {
        let n = 20;
        let r: Vec<f64> = (0..n).flat_map(|_| [0.7, -1.25]).collect();
        let ann = vec![true; n];
        let vis = vec![1.0; n];
        let data = data_for(&r, &ann, &vis, &[0]);
        let params = TreeParams { depth: 4, candidates: 20, pattern_len: 43, tau_range: (-0.3, 0.3), seed: 1 };
        let tree = fit_tree(&data, (0..n).collect(), &params, &|s, t: &SplitParams<f64>| (s * 7 % 5) as f64 * 0.1 - t.tau);
        for node in &tree.nodes {
            if let Node::Leaf(l) = node {
                assert_eq!(l.residual, vec![0.7, -1.25]);
            }
        }
    }

    #[test]
    fn depth_four_has_at_most_sixteen_leaves() {
        let n = 200;
        let r: Vec<f64> = (0..n).flat_map(|i| [(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let ann = vec![true; n];
        let vis = vec![1.0; n];
        let data = data_for(&r, &ann, &vis, &[0]);
        let params = TreeParams { depth: 4, candidates: 30, pattern_len: 43, tau_range: (-0.3, 0.3), seed: 2 };
        let tree = fit_tree(&data, (0..n).collect(), &params, &|s, t: &SplitParams<f64>| ((s * (t.p1 + 3) * 13 + t.p2) % 17) as f64 / 17.0 - 0.5);
        assert!(tree.leaf_count() <= 16 && tree.leaf_count() > 1);
        assert!(tree.depth() <= 4);
    }

    #[test]
    fn leaf_visibility_is_arithmetic_mean() {
        let r = vec![0.0; 8];
        let ann = vec![true; 4];
        let vis = [1.0, 1.0, 0.0, 1.0];
        let data = data_for(&r, &ann, &vis, &[0]);
        let leaf = make_leaf(&data, &[0, 1, 2, 3]);
        assert_eq!(leaf.visibility, vec![0.75]);
    }

    #[test]
    fn leaf_mean_ignores_unannotated_rows() {
        let r = [2.0, 4.0, 0.0, 0.0, 4.0, 8.0];
        let ann = [true, false, true];
        let vis = [1.0, 0.0, 0.0];
        let data = data_for(&r, &ann, &vis, &[5]);
        let leaf = make_leaf(&data, &[0, 1, 2]);
        assert_eq!(leaf.residual, vec![3.0, 6.0]);
        assert_eq!(leaf.visibility, vec![0.5]);
        let none = make_leaf(&data, &[1]);
        assert_eq!((none.residual, none.visibility), (vec![0.0, 0.0], vec![1.0]));
    }
}
