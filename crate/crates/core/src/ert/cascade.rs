//! Stage-wise cascade training with validation-driven early stopping and
//! the coarse-to-fine switch, plus inference.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parts::{train_parts, PartsConfig, PartsStage};
use crate::error::{Error, Result};
use crate::features::{feature_at, stage_scale, FeatureMode, FreakPattern, ProbeCache};
use crate::heatmap::{smooth, FeatureMaps, GrayView, LandmarkMaps, ProbabilityMaps};
use crate::metrics::nme;
use crate::pose::{robust_init, Camera, Model3D, RansacConfig};
use crate::real::{derive_seed, Real};
use crate::shape::{BBox, LandmarkSchema, Point2, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Stage cap `T`.
    pub stages: usize,
    /// Trees per coarse stage `K1`.
    pub coarse_trees: usize,
    /// Trees per part in a fine stage `K2`.
    pub fine_trees: usize,
    pub depth: usize,
    pub candidates: usize,
    pub shrinkage: f64,
    pub subsample: f64,
    /// Relative validation improvement below which training stops; `None`
    /// trains all `T` stages.
    pub early_stop_delta: Option<f64>,
    pub coarse_to_fine: bool,
    pub feature_mode: FeatureMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stages: 20,
            coarse_trees: 50,
            fine_trees: 50,
            depth: 4,
            candidates: 200,
            shrinkage: 0.1,
            subsample: 0.5,
            early_stop_delta: Some(0.01),
            coarse_to_fine: true,
            feature_mode: FeatureMode::Heatmap,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidArgument("need at least one stage".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::InvalidArgument(format!("shrinkage {} not in (0,1]", self.shrinkage)));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidArgument(format!("subsample {} not in (0,1]", self.subsample)));
        }
        if let Some(d) = self.early_stop_delta {
            if !d.is_finite() {
                return Err(Error::InvalidArgument("early-stop delta must be finite".into()));
            }
        }
        Ok(())
    }
}

/// One training or validation item in the crop frame.
#[derive(Clone, Debug)]
pub struct TrainSample<T, M> {
    pub maps: M,
    pub target: Shape<T>,
    pub initial: Shape<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageLog {
    pub stage: usize,
    pub parts: usize,
    pub trees: usize,
    pub train_nme: f64,
    pub val_nme: f64,
    /// Relative validation improvement over the previous stage.
    pub improvement: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    StageCap,
    EarlyStop { improvement: f64, delta: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    pub header: Vec<String>,
    pub initial_train_nme: f64,
    pub initial_val_nme: f64,
    pub stages: Vec<StageLog>,
    /// First fine stage, if the coarse-to-fine switch fired.
    pub fine_from: Option<usize>,
    pub stop: StopReason,
    pub max_stages: usize,
}

impl fmt::Display for TrainingLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for h in &self.header {
            writeln!(f, "# {h}")?;
        }
        writeln!(f, "stage parts trees train_nme val_nme improvement")?;
        writeln!(f, "0 - 0 {:.6} {:.6} -", self.initial_train_nme, self.initial_val_nme)?;
        for s in &self.stages {
            writeln!(
                f,
                "{} {} {} {:.6} {:.6} {:.4}%",
                s.stage,
                s.parts,
                s.trees,
                s.train_nme,
                s.val_nme,
                100.0 * s.improvement
            )?;
        }
        match self.stop {
            StopReason::StageCap => write!(f, "stop: stage cap reached, T* = {} of T = {}", self.stages.len(), self.max_stages),
            StopReason::EarlyStop { improvement, delta } => write!(
                f,
                "stop: early, improvement {:.4}% < {:.4}%, T* = {} of T = {}",
                100.0 * improvement,
                100.0 * delta,
                self.stages.len(),
                self.max_stages
            ),
        }
    }
}

/// Replaces the measured validation NME of a stage (1-based) during
/// training; used to inject validation curves.
pub type ValidationOverride<'a> = dyn Fn(usize, f64) -> f64 + Sync + 'a;

fn mean_nme<T: Real>(shapes: &[Shape<T>], targets: &[Shape<T>], d: T) -> f64 {
    let errs: Vec<f64> = shapes
        .iter()
        .zip(targets)
        .filter_map(|(s, t)| nme(s, t, d).ok().map(Real::as_f64))
        .collect();
    if errs.is_empty() {
        0.0
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    }
}

/// Applies one stage to a shape using features read at its starting shape.
pub fn apply_stage<T: Real, M: LandmarkMaps<T> + ?Sized>(
    stage: &PartsStage<T>,
    maps: &M,
    pattern: &FreakPattern<T>,
    shape: &mut Shape<T>,
) {
    let frozen = shape.coords.clone();
    let offsets = pattern.offsets();
    stage.apply(shape, |t| feature_at(maps, &frozen, t, offsets, stage.stage_scale));
}

/// Trains up to `T` stages. Validation data only drives early stopping and
/// the coarse-to-fine switch; it never reaches tree fitting.
pub fn train_cascade<T, M, V>(
    train: &[TrainSample<T, M>],
    val: &[TrainSample<T, V>],
    fine_parts: &[Vec<usize>],
    pattern: &FreakPattern<T>,
    cfg: &TrainConfig,
    val_override: Option<&ValidationOverride<'_>>,
) -> Result<(Vec<PartsStage<T>>, TrainingLog)>
where
    T: Real,
    M: LandmarkMaps<T> + Send + Sync,
    V: LandmarkMaps<T> + Send + Sync,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let l = train[0].target.len();
    let consistent = |s: &Shape<T>| s.len() == l;
    if !train.iter().all(|s| consistent(&s.target) && consistent(&s.initial))
        || !val.iter().all(|s| consistent(&s.target) && consistent(&s.initial))
    {
        return Err(Error::Schema("training shapes disagree in landmark count".into()));
    }
    let (h, w) = train[0].maps.size();
    let d = T::from_usize_lossy(h * w).sqrt();
    let coarse = [(0..l).collect::<Vec<_>>()];

    let train_maps: Vec<&M> = train.iter().map(|s| &s.maps).collect();
    let train_targets: Vec<Shape<T>> = train.iter().map(|s| s.target.clone()).collect();
    let val_targets: Vec<Shape<T>> = val.iter().map(|s| s.target.clone()).collect();
    let mut cur_train: Vec<Shape<T>> = train.iter().map(|s| s.initial.clone()).collect();
    let mut cur_val: Vec<Shape<T>> = val.iter().map(|s| s.initial.clone()).collect();

    let initial_train_nme = mean_nme(&cur_train, &train_targets, d);
    let measured = mean_nme(&cur_val, &val_targets, d);
    let initial_val_nme = val_override.map_or(measured, |h| h(0, measured));
    let mut prev_val = initial_val_nme;
    let mut fine = false;
    let mut fine_from = None;
    let mut stages = Vec::new();
    let mut log = Vec::new();
    let mut stop = StopReason::StageCap;
    let tau_range = cfg.feature_mode.tau_range();

    for t in 0..cfg.stages {
        let scale: T = stage_scale(t, cfg.stages);
        let probes = ProbeCache::build(&train_maps, &cur_train, pattern, scale);
        let (parts, trees) = if fine { (fine_parts, cfg.fine_trees) } else { (&coarse[..], cfg.coarse_trees) };
        let pcfg = PartsConfig {
            trees,
            depth: cfg.depth,
            candidates: cfg.candidates,
            shrinkage: cfg.shrinkage,
            subsample: cfg.subsample,
            pattern_len: pattern.len(),
            tau_range,
        };
        let feature = |i: usize, theta: &crate::features::SplitParams<T>| probes.feature(i, theta);
        let stage = train_parts(
            &train_targets,
            &mut cur_train,
            &feature,
            parts,
            &pcfg,
            scale,
            derive_seed(cfg.seed, &[t as u64]),
        );
        cur_val
            .par_iter_mut()
            .zip(val.par_iter())
            .for_each(|(shape, s)| apply_stage(&stage, &s.maps, pattern, shape));

        let train_nme = mean_nme(&cur_train, &train_targets, d);
        let measured = mean_nme(&cur_val, &val_targets, d);
        let val_nme = val_override.map_or(measured, |h| h(t + 1, measured));
        let improvement = if prev_val > 0.0 { (prev_val - val_nme) / prev_val } else { 0.0 };
        log.push(StageLog {
            stage: t + 1,
            parts: parts.len(),
            trees: stage.tree_count(),
            train_nme,
            val_nme,
            improvement,
        });
        stages.push(stage);
        if cfg.coarse_to_fine && !fine && train_nme < val_nme {
            fine = true;
            fine_from = Some(t + 2);
        }
        if let Some(delta) = cfg.early_stop_delta {
            if !(improvement >= delta) {
                stop = StopReason::EarlyStop { improvement, delta };
                break;
            }
        }
        prev_val = val_nme;
    }
    let log = TrainingLog {
        header: Vec::new(),
        initial_train_nme,
        initial_val_nme,
        stages: log,
        fine_from: if fine_from.is_some_and(|s| s <= stages.len()) { fine_from } else { None },
        stop,
        max_stages: cfg.stages,
    };
    Ok((stages, log))
}

/// How inference obtains `x^0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    /// Mean training shape anchored to the face box.
    #[serde(rename = "mean")]
    MeanShape,
    /// Robust 3D pose fitted to the map peaks.
    #[default]
    #[serde(rename = "3d")]
    Pose3D,
}

/// A trained cascade plus everything inference needs.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel<T> {
    pub config: TrainConfig,
    pub init_mode: InitMode,
    pub schema: LandmarkSchema,
    pub model3d: Model3D<T>,
    pub pattern: FreakPattern<T>,
    /// Mean shape in bbox-normalized coordinates.
    pub mean_shape: Shape<T>,
    pub camera: Camera<T>,
    pub ransac: RansacConfig,
    /// Gaussian smoothing applied to maps before 3D initialization.
    pub init_smoothing: Option<f64>,
    pub map_size: (usize, usize),
    pub stages: Vec<PartsStage<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    /// Final shape in image coordinates.
    pub shape: Shape<T>,
    /// Final shape in crop coordinates.
    pub crop: Shape<T>,
    /// Initialization in crop coordinates.
    pub initial: Shape<T>,
    /// The 3D initialization failed and the mean shape was used.
    pub fallback: bool,
}

impl<T: Real> CascadeModel<T> {
    pub fn mean_shape_crop(&self) -> Shape<T> {
        let (h, w) = self.map_size;
        let (hf, wf) = (T::from_usize_lossy(h), T::from_usize_lossy(w));
        self.mean_shape.map_coords(|p| Point2::new(p.x * wf, p.y * hf))
    }

    /// `x^0` for one face in crop coordinates; the flag reports a fallback
    /// to the mean shape.
    pub fn initialize<M: LandmarkMaps<T>>(&self, maps: &M) -> Result<(Shape<T>, bool)> {
        self.check_maps(maps)?;
        match self.init_mode {
            InitMode::MeanShape => Ok((self.mean_shape_crop(), false)),
            InitMode::Pose3D => {
                let fitted = match self.init_smoothing {
                    Some(sigma) => {
                        let dense = smooth(&ProbabilityMaps::render(maps), T::lit(sigma))?;
                        robust_init(&dense, &self.model3d, &self.camera, &self.ransac)
                    }
                    None => robust_init(maps, &self.model3d, &self.camera, &self.ransac),
                };
                match fitted {
                    Ok(r) => Ok((r.shape, false)),
                    Err(e) if e.is_numeric() => Ok((self.mean_shape_crop(), true)),
                    Err(e) => Err(e),
                }
            }
        }
    }

    fn check_maps<M: LandmarkMaps<T>>(&self, maps: &M) -> Result<()> {
        if maps.landmark_count() != self.schema.len() || maps.size() != self.map_size {
            return Err(Error::Schema(format!(
                "maps are {}x{:?}, model expects {}x{:?}",
                maps.landmark_count(),
                maps.size(),
                self.schema.len(),
                self.map_size
            )));
        }
        Ok(())
    }

    /// Runs every stage from `initial` (crop coordinates).
    pub fn refine<M: LandmarkMaps<T>>(&self, maps: &M, initial: &Shape<T>) -> Shape<T> {
        let mut shape = initial.clone();
        match self.config.feature_mode {
            FeatureMode::Heatmap => {
                for stage in &self.stages {
                    apply_stage(stage, maps, &self.pattern, &mut shape);
                }
            }
            FeatureMode::Gray => {
                let gray: FeatureMaps<&M> = FeatureMaps::Gray(GrayView::new(maps));
                for stage in &self.stages {
                    apply_stage(stage, &gray, &self.pattern, &mut shape);
                }
            }
        }
        for v in shape.visibility.iter_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
        shape
    }

    /// Full inference for one face given its crop maps and face box.
    pub fn predict<M: LandmarkMaps<T>>(&self, maps: &M, bbox: &BBox<T>) -> Result<Prediction<T>> {
        let (initial, fallback) = self.initialize(maps)?;
        let crop = self.refine(maps, &initial);
        let shape = crop.from_crop(bbox, self.map_size);
        Ok(Prediction { shape, crop, initial, fallback })
    }

    pub fn tree_count(&self) -> usize {
        self.stages.iter().map(|s| s.tree_count()).sum()
    }
}
