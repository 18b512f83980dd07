//! End-to-end glue: map sources, split, per-source initialization,
//! augmentation, cascade training, evaluation and the cross-dataset matrix.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ert::{train_cascade, CascadeModel, InitMode, Prediction, TrainConfig, TrainSample, TrainingLog, ValidationOverride};
use crate::error::{Error, Result};
use crate::features::{FeatureMode, FreakPattern};
use crate::heatmap::{
    read_maps, smooth, synthesize_blobs, BlobMaps, FeatureMaps, GrayView, LandmarkMaps, ProbabilityMaps, SynthConfig,
    TransformedMaps,
};
use crate::metrics::{normalizer, shared_distinct, EvalReport, Normalization};
use crate::pose::{mean_shape_lenient, robust_init, Camera, Model3D, RansacConfig};
use crate::real::{derive_seed, Real};
use crate::shape::{augment, split_train_val, AugmentConfig, Dataset, Sample, Shape, SourceInit, FACE_SIZE};
use crate::synth::map_seed;

/// Supplies the probability maps of a sample in its crop frame.
pub trait MapSource<T: Real>: Sync {
    type Maps: LandmarkMaps<T> + Send + Sync;
    fn maps(&self, sample: &Sample<T>) -> Result<Self::Maps>;
}

/// Analytic synthetic maps seeded by the image name.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticMaps {
    pub config: SynthConfig,
    pub seed: u64,
    pub size: (usize, usize),
}

impl SyntheticMaps {
    pub fn new(config: SynthConfig, seed: u64) -> Self {
        SyntheticMaps { config, seed, size: (FACE_SIZE, FACE_SIZE) }
    }
}

impl<T: Real> MapSource<T> for SyntheticMaps {
    type Maps = BlobMaps<T>;
    fn maps(&self, sample: &Sample<T>) -> Result<BlobMaps<T>> {
        Ok(synthesize_blobs(sample, self.size, &self.config, map_seed(self.seed, &sample.image)))
    }
}

/// Map files named `<image>.lmpm` under a directory.
#[derive(Clone, Debug, PartialEq)]
pub struct MapFiles {
    pub dir: PathBuf,
}

impl MapFiles {
    pub fn path_for(&self, image: &str) -> PathBuf {
        self.dir.join(format!("{image}.lmpm"))
    }
}

impl<T: Real> MapSource<T> for MapFiles {
    type Maps = ProbabilityMaps<T>;
    fn maps(&self, sample: &Sample<T>) -> Result<ProbabilityMaps<T>> {
        read_maps(self.path_for(&sample.image))
    }
}

fn load_all<T: Real, S: MapSource<T>>(source: &S, data: &Dataset<T>) -> Result<Vec<S::Maps>> {
    data.samples.par_iter().map(|s| source.maps(s)).collect()
}

/// Everything `train_model` needs besides data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub init_mode: InitMode,
    pub augment: AugmentConfig,
    /// Augmented training set size `N_A` (at least the split's size).
    pub augment_count: usize,
    pub val_fraction: f64,
    /// RANSAC hypotheses `Z`.
    pub ransac_iterations: usize,
    pub ransac_subset: usize,
    /// Gaussian smoothing of the maps before the 3D initialization.
    pub init_smoothing: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            init_mode: InitMode::Pose3D,
            augment: AugmentConfig::default(),
            augment_count: 60_000,
            val_fraction: 0.1,
            ransac_iterations: 25,
            ransac_subset: 6,
            init_smoothing: None,
        }
    }
}

impl PipelineConfig {
    pub fn ransac(&self) -> RansacConfig {
        RansacConfig {
            iterations: self.ransac_iterations,
            subset_size: self.ransac_subset,
            seed: derive_seed(self.train.seed, &[2]),
        }
    }

    /// The train/validation split `train_model` uses.
    pub fn split<T: Real>(&self, dataset: &Dataset<T>) -> Result<(Dataset<T>, Dataset<T>)> {
        split_train_val(dataset, self.val_fraction, derive_seed(self.train.seed, &[0]))
    }

    /// Key settings echoed at the top of the training log.
    pub fn header(&self) -> Vec<String> {
        let t = &self.train;
        vec![
            format!(
                "T={} K1={} K2={} depth={} candidates={} nu={} eta={} Z={}",
                t.stages, t.coarse_trees, t.fine_trees, t.depth, t.candidates, t.shrinkage, t.subsample, self.ransac_iterations
            ),
            format!(
                "init={} features={} coarse_to_fine={} early_stop={} N_A={} seed={}",
                match self.init_mode {
                    InitMode::MeanShape => "mean",
                    InitMode::Pose3D => "3d",
                },
                match t.feature_mode {
                    FeatureMode::Heatmap => "heatmap",
                    FeatureMode::Gray => "gray",
                },
                if t.coarse_to_fine { "on" } else { "off" },
                t.early_stop_delta.map_or("off".to_string(), |d| format!("{}%", 100.0 * d)),
                self.augment_count,
                t.seed
            ),
        ]
    }
}

/// Static inputs shared by every model trained on one schema.
#[derive(Clone, Debug)]
pub struct Assets<T> {
    pub model3d: Model3D<T>,
    pub pattern: FreakPattern<T>,
}

impl<T: Real> Assets<T> {
    pub fn builtin() -> Self {
        Assets { model3d: Model3D::builtin(), pattern: FreakPattern::builtin() }
    }
}

fn wrap<M>(mode: FeatureMode, maps: M) -> FeatureMaps<M> {
    match mode {
        FeatureMode::Heatmap => FeatureMaps::Heatmap(maps),
        FeatureMode::Gray => FeatureMaps::Gray(GrayView::new(maps)),
    }
}

/// The pose of one source face used to seed its augmented initial shapes.
fn source_init<T: Real, M: LandmarkMaps<T>>(model: &CascadeModel<T>, maps: &M) -> Result<SourceInit<T>> {
    if model.init_mode == InitMode::MeanShape {
        return Ok(SourceInit::Shape(model.mean_shape_crop()));
    }
    let fitted = match model.init_smoothing {
        Some(sigma) => robust_init(&smooth(&ProbabilityMaps::render(maps), T::lit(sigma))?, &model.model3d, &model.camera, &model.ransac),
        None => robust_init(maps, &model.model3d, &model.camera, &model.ransac),
    };
    match fitted {
        Ok(r) => Ok(SourceInit::Pose(r.pose)),
        Err(e) if e.is_numeric() => Ok(SourceInit::Shape(model.mean_shape_crop())),
        Err(e) => Err(e),
    }
}

/// Splits, augments and trains a cascade.
///
/// The validation split only feeds early stopping and the coarse-to-fine
/// switch. `val_override` replaces its measured NME per stage.
pub fn train_model<T: Real, S: MapSource<T>>(
    dataset: &Dataset<T>,
    source: &S,
    assets: &Assets<T>,
    cfg: &PipelineConfig,
    val_override: Option<&ValidationOverride<'_>>,
) -> Result<(CascadeModel<T>, TrainingLog)> {
    cfg.train.validate()?;
    let seed = cfg.train.seed;
    let (train, val) = cfg.split(dataset)?;
    let size = (FACE_SIZE, FACE_SIZE);
    let mut model = CascadeModel {
        config: cfg.train,
        init_mode: cfg.init_mode,
        schema: (*dataset.schema).clone(),
        model3d: assets.model3d.clone(),
        pattern: assets.pattern.clone(),
        mean_shape: mean_shape_lenient(&train)?,
        camera: Camera::for_crop(size),
        ransac: cfg.ransac(),
        init_smoothing: cfg.init_smoothing,
        map_size: size,
        stages: Vec::new(),
    };
    if model.model3d.len() != model.schema.len() {
        return Err(Error::Schema(format!(
            "3D model has {} points for {} landmarks",
            model.model3d.len(),
            model.schema.len()
        )));
    }

    let train_maps = load_all(source, &train)?;
    let inits = train_maps.par_iter().map(|m| source_init(&model, m)).collect::<Result<Vec<_>>>()?;
    let count = cfg.augment_count.max(train.len());
    let augmented = augment(&train, &inits, &model.model3d, size, count, &cfg.augment, derive_seed(seed, &[1]))?;
    let mirror = dataset.schema.mirror_table();
    let mode = cfg.train.feature_mode;
    let train_set: Vec<_> = augmented
        .iter()
        .map(|a| TrainSample {
            maps: wrap(mode, TransformedMaps::new(&train_maps[a.source], a.transform, &mirror, &a.occlusions)),
            target: a.target.clone(),
            initial: a.initial.clone(),
        })
        .collect();

    let val_maps = load_all(source, &val)?;
    let val_set = val
        .samples
        .par_iter()
        .zip(val_maps.par_iter())
        .map(|(s, m)| {
            let (initial, _) = model.initialize(m)?;
            Ok(TrainSample { maps: wrap(mode, m), target: s.crop_ground_truth(size), initial })
        })
        .collect::<Result<Vec<_>>>()?;

    let fine_parts: Vec<Vec<usize>> = model.schema.parts().into_iter().filter(|p| !p.is_empty()).collect();
    let (stages, mut log) = train_cascade(&train_set, &val_set, &fine_parts, &model.pattern, &cfg.train, val_override)?;
    model.stages = stages;
    log.header = cfg.header();
    Ok((model, log))
}

/// Predicts every face of a dataset.
pub fn predict_dataset<T: Real, S: MapSource<T>>(
    model: &CascadeModel<T>,
    data: &Dataset<T>,
    source: &S,
) -> Result<Vec<Prediction<T>>> {
    if data.schema.len() != model.schema.len() {
        return Err(Error::Schema(format!(
            "model has {} landmarks, data {}",
            model.schema.len(),
            data.schema.len()
        )));
    }
    data.samples.par_iter().map(|s| model.predict(&source.maps(s)?, &s.bbox)).collect()
}

/// Full metric report of a model on a dataset.
pub fn evaluate<T: Real, S: MapSource<T>>(
    model: &CascadeModel<T>,
    data: &Dataset<T>,
    source: &S,
    normalization: Normalization,
    epsilon: f64,
) -> Result<EvalReport> {
    let preds = predict_dataset(model, data, source)?;
    let shapes: Vec<Shape<T>> = preds.iter().map(|p| p.shape.clone()).collect();
    let gts: Vec<Shape<T>> = data.samples.iter().map(|s| s.ground_truth.clone()).collect();
    let ids = data.schema.normalization_landmarks();
    let norms = data
        .samples
        .iter()
        .map(|s| normalizer(&s.ground_truth, &s.bbox, normalization, &ids))
        .collect::<Result<Vec<T>>>()?;
    let mut report = EvalReport::from_predictions(&shapes, &gts, &norms, normalization, epsilon)?;
    report.fallbacks = preds.iter().filter(|p| p.fallback).count();
    Ok(report)
}

/// Mean height-normalized NME of a model on a test set over the distinct
/// landmarks both schemas share.
pub fn cross_nme<T: Real, S: MapSource<T>>(model: &CascadeModel<T>, test: &Dataset<T>, source: &S) -> Result<f64> {
    let pairs = shared_distinct(&model.schema, &test.schema)?;
    let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let preds = predict_dataset(model, test, source)?;
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(&test.samples) {
        let d = s.bbox.size();
        total += crate::metrics::nme(&p.shape.select(&a), &s.ground_truth.select(&b), d)?.as_f64();
    }
    Ok(total / preds.len().max(1) as f64)
}

/// `matrix[i][j]` is model `i` evaluated on test set `j`.
pub fn cross_matrix<T: Real, S: MapSource<T>>(
    models: &[&CascadeModel<T>],
    tests: &[(&Dataset<T>, &S)],
) -> Result<Vec<Vec<f64>>> {
    models
        .iter()
        .map(|m| tests.iter().map(|(d, s)| cross_nme(m, d, *s)).collect())
        .collect()
}

/// One row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub init_mode: InitMode,
    pub feature_mode: FeatureMode,
    pub coarse_to_fine: bool,
}

impl Ablation {
    /// Every combination of MS/3D, SE/DE and CF on/off.
    pub fn all() -> Vec<Ablation> {
        let mut out = Vec::new();
        for init_mode in [InitMode::MeanShape, InitMode::Pose3D] {
            for feature_mode in [FeatureMode::Gray, FeatureMode::Heatmap] {
                for coarse_to_fine in [false, true] {
                    out.push(Ablation { init_mode, feature_mode, coarse_to_fine });
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!(
            "CNN+{}+{}{}",
            match self.init_mode {
                InitMode::MeanShape => "MS",
                InitMode::Pose3D => "3D",
            },
            match self.feature_mode {
                FeatureMode::Gray => "SE",
                FeatureMode::Heatmap => "DE",
            },
            if self.coarse_to_fine { "+CF" } else { "" }
        )
    }

    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        cfg.init_mode = self.init_mode;
        cfg.train.feature_mode = self.feature_mode;
        cfg.train.coarse_to_fine = self.coarse_to_fine;
        cfg
    }
}
