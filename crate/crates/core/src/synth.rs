//! Synthetic face corpora: random rigid poses of the 3D model, low-rank
//! non-rigid deformations, projected ground truth and random face boxes.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::SynthConfig;
use crate::linalg::Vec3;
use crate::pose::{Camera, Model3D, RigidPose};
use crate::real::{derive_seed, mix_seed, stable_hash, Real};
use crate::shape::{BBox, Dataset, LandmarkSchema, Point2, Sample, Shape, FACE_SIZE};

/// A named displacement field over model landmarks (model units per unit
/// coefficient). Landmarks missing from the model are skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationMode {
    pub name: &'static str,
    pub moves: Vec<(&'static str, [f64; 3])>,
}

/// Brow raises, gaze shift, mouth opening and smile.
pub fn builtin_modes() -> Vec<DeformationMode> {
    let up = [0.0, -1.0, 0.0];
    let down = [0.0, 1.0, 0.0];
    vec![
        DeformationMode { name: "left_brow", moves: vec![("left_brow_outer", up), ("left_brow_inner", up)] },
        DeformationMode { name: "right_brow", moves: vec![("right_brow_inner", up), ("right_brow_outer", up)] },
        DeformationMode {
            name: "gaze",
            moves: vec![("left_pupil", [1.0, 0.0, 0.0]), ("right_pupil", [1.0, 0.0, 0.0])],
        },
        DeformationMode {
            name: "mouth_open",
            moves: vec![
                ("lower_lip_top", [0.0, 0.6, 0.0]),
                ("lower_lip_bottom", down),
                ("chin", [0.0, 0.8, 0.0]),
            ],
        },
        DeformationMode {
            name: "smile",
            moves: vec![("mouth_left", [-1.0, -0.6, 0.0]), ("mouth_right", [1.0, -0.6, 0.0])],
        },
    ]
}

/// Corpus generator settings. Angles in degrees, lengths in model units
/// unless stated otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub count: usize,
    pub seed: u64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    /// Model units per crop pixel at zero jitter is `depth / focal`.
    pub depth: f64,
    /// Relative depth jitter.
    pub scale_jitter: f64,
    pub shift: f64,
    /// Standard deviation of every deformation coefficient.
    pub deformation: f64,
    /// One shared coefficient drives every mode (rank-1 deformations).
    pub coupled: bool,
    /// Per-mode coefficient means; missing entries are zero.
    pub mode_means: Vec<f64>,
    /// Probability that a landmark is left unannotated.
    pub missing_rate: f64,
    /// Face box side range in image pixels.
    pub bbox_min: f64,
    pub bbox_max: f64,
    /// Face box origin range in image pixels.
    pub image_extent: f64,
    pub maps: SynthConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            count: 100,
            seed: 0,
            yaw_deg: 30.0,
            pitch_deg: 15.0,
            roll_deg: 15.0,
            depth: 1500.0,
            scale_jitter: 0.05,
            shift: 4.0,
            deformation: 6.0,
            coupled: false,
            mode_means: Vec::new(),
            missing_rate: 0.0,
            bbox_min: 120.0,
            bbox_max: 240.0,
            image_extent: 400.0,
            maps: SynthConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("corpus count must be positive".into()));
        }
        if !(self.depth > 0.0) || !(0.0..1.0).contains(&self.scale_jitter) {
            return Err(Error::InvalidArgument("depth must be positive and jitter in [0,1)".into()));
        }
        if !(self.deformation >= 0.0) || !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidArgument("deformation must be non-negative and missing rate in [0,1]".into()));
        }
        if !(self.bbox_min > 0.0 && self.bbox_max >= self.bbox_min) || !(self.image_extent >= 0.0) {
            return Err(Error::InvalidArgument("invalid face box range".into()));
        }
        self.maps.validate()
    }
}

/// A generated corpus with its hidden generative variables.
#[derive(Clone, Debug)]
pub struct Corpus<T> {
    pub dataset: Dataset<T>,
    pub poses: Vec<RigidPose<T>>,
    pub coefficients: Vec<Vec<f64>>,
    /// Noise-free rigid projection of the undeformed model in crop pixels.
    pub rigid: Vec<Vec<Point2<T>>>,
}

/// Applies mode coefficients to the model points.
pub fn deform<T: Real>(model: &Model3D<T>, modes: &[DeformationMode], coeffs: &[f64]) -> Vec<Vec3<T>> {
    let mut pts = model.points.clone();
    for (mode, &c) in modes.iter().zip(coeffs) {
        if c == 0.0 {
            continue;
        }
        for (name, dir) in &mode.moves {
            if let Some(l) = model.names.iter().position(|n| n == name) {
                for (p, d) in pts[l].iter_mut().zip(dir) {
                    *p = *p + T::lit(c * d);
                }
            }
        }
    }
    pts
}

/// Generates a reproducible corpus. Face `i` uses its own seed stream, so
/// corpora with the same seed share their first faces.
pub fn generate_corpus<T: Real>(
    cfg: &CorpusConfig,
    schema: Arc<LandmarkSchema>,
    model: &Model3D<T>,
) -> Result<Corpus<T>> {
    cfg.validate()?;
    if schema.len() != model.len() {
        return Err(Error::Schema(format!("schema has {} landmarks, 3D model {}", schema.len(), model.len())));
    }
    let modes = builtin_modes();
    let size = (FACE_SIZE, FACE_SIZE);
    let camera = Camera::<T>::for_crop(size);
    let faces: Vec<_> = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[i as u64]));
            let mut sym = |b: f64| b * (2.0 * rng.random::<f64>() - 1.0);
            let yaw = sym(cfg.yaw_deg).to_radians();
            let pitch = sym(cfg.pitch_deg).to_radians();
            let roll = sym(cfg.roll_deg).to_radians();
            let depth = cfg.depth * (1.0 + sym(cfg.scale_jitter));
            let (tx, ty) = (sym(cfg.shift), sym(cfg.shift));
            let side = cfg.bbox_min + (cfg.bbox_max - cfg.bbox_min) * rng.random::<f64>();
            let bx = cfg.image_extent * rng.random::<f64>();
            let by = cfg.image_extent * rng.random::<f64>();
            let shared: f64 = StandardNormal.sample(&mut rng);
            let coeffs: Vec<f64> = (0..modes.len())
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let mean = cfg.mode_means.get(m).copied().unwrap_or(0.0);
                    mean + cfg.deformation * if cfg.coupled { shared } else { z }
                })
                .collect();
            let missing: Vec<bool> = (0..model.len()).map(|_| rng.random::<f64>() < cfg.missing_rate).collect();

            // The face centre sits slightly below the model origin.
            let translation = [T::lit(tx), T::lit(ty - 12.0), T::lit(depth)];
            let pose = RigidPose::from_euler(T::lit(yaw), T::lit(pitch), T::lit(roll), translation, camera);
            let rigid = pose.project(&model.points);
            let crop = pose.project(&deform(model, &modes, &coeffs));
            let visibility = pose.visibility(&model.normals);
            let bbox = BBox::new(T::lit(bx), T::lit(by), T::lit(side), T::lit(side))?;
            let annotated: Vec<bool> = missing.iter().map(|m| !m).collect();
            let mut gt = Shape::new(crop, visibility, annotated)?.from_crop(&bbox, size);
            for (p, a) in gt.coords.iter_mut().zip(&gt.annotated) {
                if !a {
                    *p = Point2::zero();
                }
            }
            let sample = Sample { image: format!("synth_{}_{i:06}", cfg.seed), bbox, ground_truth: gt, initial: None };
            Ok((sample, pose, coeffs, rigid))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::with_capacity(faces.len());
    let mut poses = Vec::with_capacity(faces.len());
    let mut coefficients = Vec::with_capacity(faces.len());
    let mut rigid = Vec::with_capacity(faces.len());
    for (s, p, c, r) in faces {
        samples.push(s);
        poses.push(p);
        coefficients.push(c);
        rigid.push(r);
    }
    Ok(Corpus { dataset: Dataset::new(schema, samples)?, poses, coefficients, rigid })
}

/// Seed of a sample's synthetic maps: the image name mixed into the base.
pub fn map_seed(base: u64, image: &str) -> u64 {
    mix_seed(base, stable_hash(image))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(cfg: &CorpusConfig) -> Corpus<f64> {
        generate_corpus(cfg, Arc::new(LandmarkSchema::builtin()), &Model3D::builtin()).unwrap()
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = CorpusConfig { count: 12, seed: 7, ..Default::default() };
        let (a, b) = (corpus(&cfg), corpus(&cfg));
        assert_eq!(a.dataset.samples, b.dataset.samples);
    }

    #[test]
    fn zero_deformation_is_rigid_projection() {
        let cfg = CorpusConfig { count: 8, deformation: 0.0, ..Default::default() };
        let c = corpus(&cfg);
        for (s, r) in c.dataset.samples.iter().zip(&c.rigid) {
            let crop = s.crop_ground_truth((FACE_SIZE, FACE_SIZE));
            for (p, q) in crop.coords.iter().zip(r) {
                assert!(p.distance(q) < 1e-9);
            }
        }
    }

    #[test]
    fn faces_fit_the_crop() {
        let c = corpus(&CorpusConfig { count: 50, ..Default::default() });
        for s in &c.dataset.samples {
            let crop = s.crop_ground_truth((FACE_SIZE, FACE_SIZE));
            assert!(crop.coords.iter().all(|p| p.x > 0.0 && p.x < 160.0 && p.y > 0.0 && p.y < 160.0));
        }
    }

    #[test]
    fn coupled_coefficients_share_one_draw() {
        let c = corpus(&CorpusConfig { count: 10, coupled: true, mode_means: vec![1.0, -1.0], ..Default::default() });
        for k in &c.coefficients {
            assert!((k[0] - 1.0 - (k[1] + 1.0)).abs() < 1e-12);
            assert!((k[2] - k[4]).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_landmarks_use_placeholder() {
        let c = corpus(&CorpusConfig { count: 20, missing_rate: 0.3, ..Default::default() });
        let mut missing = 0;
        for s in &c.dataset.samples {
            for (p, a) in s.ground_truth.coords.iter().zip(&s.ground_truth.annotated) {
                if !a {
                    assert_eq!(*p, Point2::zero());
                    missing += 1;
                }
            }
        }
        assert!(missing > 0);
    }
}
