//! Shape-indexed pixel-pair features on probability maps.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::LandmarkMaps;
use crate::real::{pixel_index, Real};
use crate::shape::{Point2, Shape};

const BUILTIN_PATTERN: &str = include_str!("../data/freak43.txt");

/// Last-stage pattern scale of the linear schedule.
pub const FINAL_STAGE_SCALE: f64 = 0.2;

/// Concentric-ring sampling offsets around a landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct FreakPattern<T> {
    offsets: Vec<Point2<T>>,
    rings: Vec<usize>,
    base_diameter: T,
}

impl<T: Real> FreakPattern<T> {
    pub fn new(offsets: Vec<Point2<T>>, rings: Vec<usize>, base_diameter: T) -> Result<Self> {
        if offsets.len() < 2 {
            return Err(Error::InvalidArgument("pattern needs at least two offsets".into()));
        }
        if rings.len() != offsets.len() {
            return Err(Error::InvalidArgument("ring ids and offsets disagree".into()));
        }
        let limit = base_diameter / T::lit(2.0) * T::lit(1.0 + 1e-9);
        if let Some(p) = offsets.iter().find(|p| !(p.norm() <= limit)) {
            return Err(Error::InvalidArgument(format!("offset ({}, {}) outside the pattern diameter", p.x, p.y)));
        }
        Ok(FreakPattern { offsets, rings, base_diameter })
    }

    /// 43 offsets: centre plus six rings of seven, 32 px across.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PATTERN).expect("builtin pattern parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `<ring> <dx> <dy>` lines. The diameter is twice the largest
    /// offset radius.
    pub fn parse(text: &str) -> Result<Self> {
        let mut offsets = Vec::new();
        let mut rings = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse { line: n + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("expected `<ring> <dx> <dy>`"));
            }
            let ring = f[0].parse().map_err(|_| bad("bad ring id"))?;
            let dx: f64 = f[1].parse().map_err(|_| bad("bad dx"))?;
            let dy: f64 = f[2].parse().map_err(|_| bad("bad dy"))?;
            rings.push(ring);
            offsets.push(Point2::new(T::lit(dx), T::lit(dy)));
        }
        let radius = offsets.iter().map(|p| p.norm()).fold(T::zero(), T::max);
        Self::new(offsets, rings, radius * T::lit(2.0))
    }

    pub fn to_text(&self) -> String {
        self.offsets
            .iter()
            .zip(&self.rings)
            .map(|(p, r)| format!("{r} {} {}\n", p.x.as_f64(), p.y.as_f64()))
            .collect()
    }

    pub fn offsets(&self) -> &[Point2<T>] {
        &self.offsets
    }

    pub fn rings(&self) -> &[usize] {
        &self.rings
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn base_diameter(&self) -> T {
        self.base_diameter
    }
}

/// Split test `θ = (τ, p1, p2, l)`: the sample goes right when the feature
/// exceeds `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitParams<T> {
    pub tau: T,
    pub p1: usize,
    pub p2: usize,
    pub landmark: usize,
}

/// Where features are read from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Landmark `l`'s own probability map.
    #[default]
    Heatmap,
    /// One grayscale intensity image shared by all landmarks.
    Gray,
}

impl FeatureMode {
    pub fn tau_range(self) -> (f64, f64) {
        match self {
            FeatureMode::Heatmap => (-0.3, 0.3),
            FeatureMode::Gray => (-32.0, 32.0),
        }
    }
}

/// Pattern scale for a stage: linear from 1 at the first stage down to
/// [`FINAL_STAGE_SCALE`] at the last.
pub fn stage_scale<T: Real>(stage: usize, total_stages: usize) -> T {
    if total_stages <= 1 {
        return T::one();
    }
    let t = T::from_usize_lossy(stage.min(total_stages - 1)) / T::from_usize_lossy(total_stages - 1);
    T::one() - (T::one() - T::lit(FINAL_STAGE_SCALE)) * t
}

/// Map location probed by offset `p` around `anchor`.
#[inline]
fn probe_at<T: Real>(anchor: Point2<T>, offset: Point2<T>, scale: T) -> (i64, i64) {
    (pixel_index(anchor.x + offset.x * scale), pixel_index(anchor.y + offset.y * scale))
}

/// `P^l[p1] − P^l[p2]` with probes anchored at the shape's landmark `l`.
pub fn feature_value<T: Real, M: LandmarkMaps<T> + ?Sized>(
    maps: &M,
    shape: &Shape<T>,
    theta: &SplitParams<T>,
    pattern: &FreakPattern<T>,
    stage_scale: T,
) -> T {
    feature_at(maps, &shape.coords, theta, pattern.offsets(), stage_scale)
}

#[inline]
pub(crate) fn feature_at<T: Real, M: LandmarkMaps<T> + ?Sized>(
    maps: &M,
    coords: &[Point2<T>],
    theta: &SplitParams<T>,
    offsets: &[Point2<T>],
    scale: T,
) -> T {
    let anchor = coords[theta.landmark];
    let (x1, y1) = probe_at(anchor, offsets[theta.p1], scale);
    let (x2, y2) = probe_at(anchor, offsets[theta.p2], scale);
    maps.value_at(theta.landmark, x1, y1) - maps.value_at(theta.landmark, x2, y2)
}

/// `count` random split tests over `part_landmarks`; `p1 != p2` always.
pub fn gen_candidates<T: Real>(
    count: usize,
    part_landmarks: &[usize],
    pattern_len: usize,
    tau_range: (f64, f64),
    seed: u64,
) -> Vec<SplitParams<T>> {
    assert!(!part_landmarks.is_empty() && pattern_len >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let landmark = part_landmarks[rng.random_range(0..part_landmarks.len())];
            let p1 = rng.random_range(0..pattern_len);
            let mut p2 = rng.random_range(0..pattern_len - 1);
            if p2 >= p1 {
                p2 += 1;
            }
            let u: f64 = rng.random();
            let tau = T::lit(tau_range.0 + (tau_range.1 - tau_range.0) * u);
            SplitParams { tau, p1, p2, landmark }
        })
        .collect()
}

/// Every probe value of every sample at a frozen set of shapes:
/// `values[(i·L + l)·P + p]`.
#[derive(Clone, Debug)]
pub struct ProbeCache<T> {
    landmarks: usize,
    pattern_len: usize,
    values: Vec<T>,
}

impl<T: Real> ProbeCache<T> {
    pub fn build<M: LandmarkMaps<T>>(
        maps: &[M],
        shapes: &[Shape<T>],
        pattern: &FreakPattern<T>,
        scale: T,
    ) -> Self {
        assert_eq!(maps.len(), shapes.len());
        let landmarks = shapes.first().map_or(0, |s| s.len());
        let offsets = pattern.offsets();
        let per_sample = landmarks * offsets.len();
        let mut values = vec![T::zero(); maps.len() * per_sample];
        if per_sample > 0 {
            values
                .par_chunks_mut(per_sample)
                .zip(maps.par_iter().zip(shapes.par_iter()))
                .for_each(|(out, (m, s))| {
                    for l in 0..landmarks {
                        for (p, off) in offsets.iter().enumerate() {
                            let (x, y) = probe_at(s.coords[l], *off, scale);
                            out[l * offsets.len() + p] = m.value_at(l, x, y);
                        }
                    }
                });
        }
        ProbeCache { landmarks, pattern_len: offsets.len(), values }
    }

    pub fn len(&self) -> usize {
        if self.landmarks == 0 {
            0
        } else {
            self.values.len() / (self.landmarks * self.pattern_len)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn feature(&self, sample: usize, theta: &SplitParams<T>) -> T {
        let base = (sample * self.landmarks + theta.landmark) * self.pattern_len;
        self.values[base + theta.p1] - self.values[base + theta.p2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::ProbabilityMaps;
    use proptest::prelude::*;

    #[test]
    fn builtin_pattern_layout() {
        let p = FreakPattern::<f64>::builtin();
        assert_eq!(p.len(), 43);
        // Offsets are stored with six decimals.
        assert!((p.base_diameter() - 32.0).abs() < 1e-5);
        assert_eq!(p.rings().iter().max(), Some(&6));
        assert_eq!(FreakPattern::<f64>::parse(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn constant_map_gives_zero() {
        let maps = ProbabilityMaps::from_fn(2, 40, 40, |_, _, _| 0.6f64);
        let shape = Shape::from_coords(vec![Point2::new(20.0, 20.0); 2]);
        let pattern = FreakPattern::builtin();
        for theta in gen_candidates::<f64>(50, &[0, 1], pattern.len(), (-0.3, 0.3), 1) {
            assert_eq!(feature_value(&maps, &shape, &theta, &pattern, 0.7), 0.0);
        }
    }

    #[test]
    fn direct_difference() {
        let pattern = FreakPattern::builtin();
        let shape = Shape::from_coords(vec![Point2::new(20.0, 20.0)]);
        let theta = SplitParams { tau: 0.0, p1: 0, p2: 1, landmark: 0 };
        // Offset 1 is (16, 0).
        let maps = ProbabilityMaps::from_fn(1, 40, 40, |_, x, y| match (x, y) {
            (20, 20) => 0.9f64,
            (36, 20) => 0.4,
            _ => 0.0,
        });
        assert!((feature_value(&maps, &shape, &theta, &pattern, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn candidates_respect_part_and_seed() {
        let c: Vec<SplitParams<f64>> = gen_candidates(200, &[3], 43, (-0.3, 0.3), 9);
        assert_eq!(c.len(), 200);
        assert!(c.iter().all(|t| t.landmark == 3 && t.p1 != t.p2 && t.tau.abs() <= 0.3));
        assert_eq!(c, gen_candidates(200, &[3], 43, (-0.3, 0.3), 9));
    }

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        assert_eq!(stage_scale::<f64>(0, 20), 1.0);
        assert!((stage_scale::<f64>(19, 20) - 0.2).abs() < 1e-15);
        for t in 1..=20 {
            let s: Vec<f64> = (0..t).map(|k| stage_scale(k, t)).collect();
            assert_eq!(s[0], 1.0);
            assert!(s.windows(2).all(|w| w[1] <= w[0]));
            assert!(s.iter().all(|v| *v > 0.0 && *v <= 1.0));
        }
    }

    #[test]
    fn cache_matches_direct_features() {
        let pattern = FreakPattern::builtin();
        let maps: Vec<_> = (0..3)
            .map(|i| ProbabilityMaps::from_fn(2, 50, 50, move |l, x, y| ((x * 31 + y * 17 + l * 5 + i) % 13) as f64 / 13.0))
            .collect();
        let shapes: Vec<_> = (0..3)
            .map(|i| Shape::from_coords(vec![Point2::new(20.0 + i as f64, 25.3), Point2::new(4.0, 47.6)]))
            .collect();
        let cache = ProbeCache::build(&maps, &shapes, &pattern, 0.6);
        for theta in gen_candidates::<f64>(100, &[0, 1], pattern.len(), (-0.3, 0.3), 4) {
            for i in 0..3 {
                assert_eq!(cache.feature(i, &theta), feature_value(&maps[i], &shapes[i], &theta, &pattern, 0.6));
            }
        }
    }

    proptest! {
        #[test]
        fn feature_is_linear_in_maps(a in 0.01f64..50.0, seed in 0u64..1000, cx in 0.0f64..60.0, cy in 0.0f64..60.0) {
            let pattern = FreakPattern::builtin();
            let maps = ProbabilityMaps::from_fn(1, 60, 60, |_, x, y| ((x * 7 + y * 3) % 11) as f64 / 11.0);
            let scaled = maps.scaled(a);
            let shape = Shape::from_coords(vec![Point2::new(cx, cy)]);
            let theta = gen_candidates::<f64>(1, &[0], pattern.len(), (-0.3, 0.3), seed)[0];
            let f = feature_value(&maps, &shape, &theta, &pattern, 1.0);
            let g = feature_value(&scaled, &shape, &theta, &pattern, 1.0);
            prop_assert!((g - a * f).abs() <= 1e-12 * a.max(1.0));
            // Decision invariance when the threshold scales too (away from ties).
            if (f - theta.tau).abs() > 1e-9 {
                prop_assert_eq!(f > theta.tau, g > a * theta.tau);
            }
        }

        #[test]
        fn candidates_never_repeat_a_probe(seed in any::<u64>(), n in 2usize..50) {
            let c: Vec<SplitParams<f32>> = gen_candidates(64, &[0, 1, 2], n, (-1.0, 1.0), seed);
            prop_assert!(c.iter().all(|t| t.p1 != t.p2 && t.p1 < n && t.p2 < n));
        }
    }
}
