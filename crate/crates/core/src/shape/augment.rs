//! Training-set augmentation in the crop frame.
//!
//! Image-space augmentations are never materialized: every augmented sample
//! records a [`CropTransform`] plus occlusion rectangles, and map reads are
//! pulled back through it by [`TransformedMaps`](crate::heatmap::TransformedMaps).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Point2, Shape};
use crate::error::{Error, Result};
use crate::pose::{Model3D, RigidPose};
use crate::real::{derive_seed, Real};

/// In-plane similarity about the crop centre, optionally preceded by a
/// horizontal mirror. Maps source crop coordinates to augmented ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropTransform<T> {
    pub angle: T,
    pub scale: T,
    pub shift: Point2<T>,
    pub mirror: bool,
    /// `(height, width)` of the crop.
    pub size: (usize, usize),
}

impl<T: Real> CropTransform<T> {
    pub fn identity(size: (usize, usize)) -> Self {
        CropTransform { angle: T::zero(), scale: T::one(), shift: Point2::zero(), mirror: false, size }
    }

    pub fn is_identity(&self) -> bool {
        self.angle == T::zero() && self.scale == T::one() && self.shift == Point2::zero() && !self.mirror
    }

    /// Pixel-centre midpoint, so mirroring maps pixels onto pixels.
    pub fn centre(&self) -> Point2<T> {
        let half = T::lit(0.5);
        Point2::new(
            (T::from_usize_lossy(self.size.1) - T::one()) * half,
            (T::from_usize_lossy(self.size.0) - T::one()) * half,
        )
    }

    pub fn apply(&self, p: Point2<T>) -> Point2<T> {
        if self.is_identity() {
            return p;
        }
        let c = self.centre();
        let mut q = p - c;
        if self.mirror {
            q.x = -q.x;
        }
        let (s, co) = self.angle.sin_cos();
        let r = Point2::new(co * q.x - s * q.y, s * q.x + co * q.y) * self.scale;
        c + r + self.shift
    }

    pub fn invert(&self, p: Point2<T>) -> Point2<T> {
        if self.is_identity() {
            return p;
        }
        let c = self.centre();
        let q = (p - c - self.shift) * (T::one() / self.scale);
        let (s, co) = self.angle.sin_cos();
        let mut r = Point2::new(co * q.x + s * q.y, -s * q.x + co * q.y);
        if self.mirror {
            r.x = -r.x;
        }
        c + r
    }

    /// Source landmark feeding augmented landmark `l`.
    #[inline]
    pub fn source_landmark(&self, l: usize, mirror_table: &[usize]) -> usize {
        if self.mirror {
            mirror_table[l]
        } else {
            l
        }
    }

    /// Transforms a crop-frame shape; under a mirror, landmarks swap with
    /// their partners so names stay anatomically correct.
    pub fn apply_shape(&self, shape: &Shape<T>, mirror_table: &[usize]) -> Shape<T> {
        let src = |l| self.source_landmark(l, mirror_table);
        let n = shape.len();
        Shape {
            coords: (0..n).map(|l| self.apply(shape.coords[src(l)])).collect(),
            visibility: (0..n).map(|l| shape.visibility[src(l)]).collect(),
            annotated: (0..n).map(|l| shape.annotated[src(l)]).collect(),
        }
    }
}

/// Axis-aligned occluder in augmented crop coordinates (inclusive bounds).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcclusionRect<T> {
    pub min: Point2<T>,
    pub max: Point2<T>,
}

impl<T: Real> OcclusionRect<T> {
    pub fn contains(&self, p: Point2<T>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Noise bounds. Angles in degrees, scale and translation as fractions of
/// the crop size; every draw is uniform in `[-bound, bound]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translation: f64,
    pub mirror_prob: f64,
    pub occlusion_prob: f64,
    /// Largest occluder side as a fraction of the crop side.
    pub occlusion_max: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: 45.0,
            scale: 0.15,
            translation: 0.05,
            mirror_prob: 0.5,
            occlusion_prob: 0.2,
            occlusion_max: 0.35,
            yaw_deg: 10.0,
            pitch_deg: 10.0,
            roll_deg: 10.0,
        }
    }
}

impl AugmentConfig {
    /// Zero noise: every augmented sample is a copy of its source.
    pub fn none() -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            scale: 0.0,
            translation: 0.0,
            mirror_prob: 0.0,
            occlusion_prob: 0.0,
            occlusion_max: 0.0,
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            roll_deg: 0.0,
        }
    }

    /// Pose noise only, for initial-shape diversity without image warps.
    pub fn pose_only(deg: f64) -> Self {
        AugmentConfig { yaw_deg: deg, pitch_deg: deg, roll_deg: deg, ..Self::none() }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [
            self.rotation_deg,
            self.scale,
            self.translation,
            self.occlusion_max,
            self.yaw_deg,
            self.pitch_deg,
            self.roll_deg,
        ];
        if bounds.iter().any(|b| !(b.is_finite() && *b >= 0.0)) || self.scale >= 1.0 {
            return Err(Error::InvalidArgument("augmentation bounds must be finite, >= 0, scale < 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) || !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(Error::InvalidArgument("augmentation probabilities must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Where a source sample's initial shape comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum SourceInit<T> {
    /// Estimated rigid pose; initial shapes are perturbed re-projections.
    Pose(RigidPose<T>),
    /// Fixed crop-frame shape (the mean shape), used as-is.
    Shape(Shape<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample<T> {
    /// Index of the source sample in the input dataset.
    pub source: usize,
    pub transform: CropTransform<T>,
    pub occlusions: Vec<OcclusionRect<T>>,
    /// Regression target in the augmented crop frame.
    pub target: Shape<T>,
    /// Initial shape and visibilities in the augmented crop frame.
    pub initial: Shape<T>,
}

/// Builds `target_count` augmented samples; sample `k` derives from source
/// `k mod N` with its own seed stream.
pub fn augment<T: Real>(
    dataset: &Dataset<T>,
    inits: &[SourceInit<T>],
    model: &Model3D<T>,
    size: (usize, usize),
    target_count: usize,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<AugmentedSample<T>>> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot augment an empty dataset".into()));
    }
    if target_count < n {
        return Err(Error::InvalidArgument(format!("target count {target_count} below dataset size {n}")));
    }
    if inits.len() != n {
        return Err(Error::InvalidArgument(format!("{} initializations for {n} samples", inits.len())));
    }
    cfg.validate()?;
    let mirror_table = dataset.schema.mirror_table();
    let (h, w) = (T::from_usize_lossy(size.0), T::from_usize_lossy(size.1));
    let deg = |d: f64| T::lit(d.to_radians());

    Ok((0..target_count)
        .into_par_iter()
        .map(|k| {
            let source = k % n;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[k as u64]));
            let mut sym = |b: f64| b * (2.0 * rng.random::<f64>() - 1.0);
            let angle = sym(cfg.rotation_deg);
            let scale = sym(cfg.scale);
            let (sx, sy) = (sym(cfg.translation), sym(cfg.translation));
            let (dy, dp, dr) = (sym(cfg.yaw_deg), sym(cfg.pitch_deg), sym(cfg.roll_deg));
            let mirror = rng.random::<f64>() < cfg.mirror_prob;
            let occluded = rng.random::<f64>() < cfg.occlusion_prob;
            let occ = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];

            let transform = CropTransform {
                angle: deg(angle),
                scale: T::one() + T::lit(scale),
                shift: Point2::new(T::lit(sx) * w, T::lit(sy) * h),
                mirror,
                size,
            };
            let src = &dataset.samples[source];
            let mut target = transform.apply_shape(&src.crop_ground_truth(size), &mirror_table);

            let initial = match &inits[source] {
                SourceInit::Pose(pose) => {
                    let (y0, p0, r0) = pose.euler();
                    let noisy = RigidPose::from_euler(y0 + deg(dy), p0 + deg(dp), r0 + deg(dr), pose.translation, pose.camera);
                    let shape = Shape {
                        coords: noisy.project(&model.points),
                        visibility: noisy.visibility(&model.normals),
                        annotated: vec![true; model.len()],
                    };
                    transform.apply_shape(&shape, &mirror_table)
                }
                SourceInit::Shape(s) => s.clone(),
            };

            let mut occlusions = Vec::new();
            if occluded {
                let side = T::lit(cfg.occlusion_max);
                let rw = T::lit(occ[0]) * side * w;
                let rh = T::lit(occ[1]) * side * h;
                let x0 = T::lit(occ[2]) * (w - rw);
                let y0 = T::lit(occ[3]) * (h - rh);
                let rect = OcclusionRect { min: Point2::new(x0, y0), max: Point2::new(x0 + rw, y0 + rh) };
                for (p, v) in target.coords.iter().zip(target.visibility.iter_mut()) {
                    if rect.contains(*p) {
                        *v = T::zero();
                    }
                }
                occlusions.push(rect);
            }
            AugmentedSample { source, transform, occlusions, target, initial }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Camera;
    use crate::shape::{BBox, LandmarkSchema, Sample};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn dataset(n: usize) -> Dataset<f64> {
        let schema = Arc::new(LandmarkSchema::builtin());
        let model = Model3D::<f64>::builtin();
        let samples = (0..n)
            .map(|i| {
                let pose = RigidPose::from_euler(0.1 * i as f64, 0.0, 0.05, [0.0, 0.0, 1400.0], Camera::default());
                let mut gt = Shape::from_coords(pose.project(&model.points));
                gt.annotated[i % 24] = false;
                gt.visibility[(i + 3) % 24] = 0.0;
                Sample {
                    image: format!("f{i}"),
                    bbox: BBox::new(0.0, 0.0, 160.0, 160.0).unwrap(),
                    ground_truth: gt,
                    initial: None,
                }
            })
            .collect();
        Dataset::new(schema, samples).unwrap()
    }

    fn pose_inits(n: usize) -> Vec<SourceInit<f64>> {
        (0..n)
            .map(|_| SourceInit::Pose(RigidPose::from_euler(0.0, 0.0, 0.0, [0.0, 0.0, 1400.0], Camera::default())))
            .collect()
    }

    #[test]
    fn zero_noise_gives_copies() {
        let ds = dataset(4);
        let model = Model3D::builtin();
        let out = augment(&ds, &pose_inits(4), &model, (160, 160), 4, &AugmentConfig::none(), 1).unwrap();
        assert_eq!(out.len(), 4);
        for (k, a) in out.iter().enumerate() {
            assert_eq!(a.source, k);
            assert!(a.transform.is_identity());
            assert_eq!(a.target, ds.samples[k].crop_ground_truth((160, 160)));
        }
    }

    #[test]
    fn target_count_below_size_is_error() {
        let ds = dataset(4);
        let model = Model3D::builtin();
        assert!(augment(&ds, &pose_inits(4), &model, (160, 160), 3, &AugmentConfig::none(), 1).is_err());
    }

    #[test]
    fn defaults_match_documented_ranges() {
        let c = AugmentConfig::default();
        assert_eq!((c.rotation_deg, c.scale, c.translation), (45.0, 0.15, 0.05));
    }

    #[test]
    fn sources_untouched_and_masks_travel_with_landmarks() {
        let ds = dataset(5);
        let before = ds.samples.clone();
        let model = Model3D::builtin();
        let mirror = ds.schema.mirror_table();
        let cfg = AugmentConfig { mirror_prob: 0.5, occlusion_prob: 0.5, ..AugmentConfig::default() };
        let out = augment(&ds, &pose_inits(5), &model, (160, 160), 40, &cfg, 2).unwrap();
        assert_eq!(ds.samples, before);
        assert!(out.iter().any(|a| a.transform.mirror));
        for a in &out {
            let src = &ds.samples[a.source].ground_truth;
            for l in 0..24 {
                assert_eq!(a.target.annotated[l], src.annotated[a.transform.source_landmark(l, &mirror)]);
            }
        }
    }

    #[test]
    fn occluded_landmarks_lose_visibility() {
        let ds = dataset(3);
        let model = Model3D::builtin();
        let cfg = AugmentConfig { occlusion_prob: 1.0, occlusion_max: 0.9, ..AugmentConfig::none() };
        let out = augment(&ds, &pose_inits(3), &model, (160, 160), 30, &cfg, 5).unwrap();
        let mut hit = 0;
        for a in &out {
            for (p, v) in a.target.coords.iter().zip(&a.target.visibility) {
                if a.occlusions[0].contains(*p) {
                    assert_eq!(*v, 0.0);
                    hit += 1;
                }
            }
        }
        assert!(hit > 0);
    }

    proptest! {
        #[test]
        fn mirror_twice_is_identity(x in -50.0f64..210.0, y in -50.0f64..210.0) {
            let m = CropTransform { mirror: true, ..CropTransform::identity((160, 160)) };
            let p = Point2::new(x, y);
            let back = m.apply(m.apply(p));
            prop_assert!((back.x - x).abs() < 1e-9 && (back.y - y).abs() < 1e-9);
        }

        #[test]
        fn invert_undoes_apply(a in -0.8f64..0.8, s in 0.85f64..1.15, tx in -8.0f64..8.0, mirror: bool,
                               x in 0.0f64..160.0, y in 0.0f64..160.0) {
            let t = CropTransform { angle: a, scale: s, shift: Point2::new(tx, -tx), mirror, size: (160, 160) };
            let p = Point2::new(x, y);
            let q = t.invert(t.apply(p));
            prop_assert!((q.x - x).abs() < 1e-9 && (q.y - y).abs() < 1e-9);
        }
    }

    #[test]
    fn mirrored_shape_twice_is_identity() {
        let ds = dataset(1);
        let table = ds.schema.mirror_table();
        let m = CropTransform { mirror: true, ..CropTransform::identity((160, 160)) };
        let s = ds.samples[0].crop_ground_truth((160, 160));
        let back = m.apply_shape(&m.apply_shape(&s, &table), &table);
        for (a, b) in back.coords.iter().zip(&s.coords) {
            assert!(a.distance(b) < 1e-9);
        }
        assert_eq!(back.annotated, s.annotated);
    }
}
