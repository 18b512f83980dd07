//! Flat run configuration. Values come from defaults, then the TOML file,
//! then command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ertalign::ert::InitMode;
use ertalign::features::{FeatureMode, FreakPattern};
use ertalign::pipeline::{Assets, PipelineConfig};
use ertalign::shape::AugmentConfig;
use ertalign::synth::CorpusConfig;
use ertalign::{LandmarkSchema, Model3D, Normalization, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapMode {
    Synthetic,
    Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: Option<usize>,
    pub output: PathBuf,

    pub schema: Option<PathBuf>,
    pub model3d: Option<PathBuf>,
    pub pattern: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub cross_train: Vec<PathBuf>,
    pub cross_test: Vec<PathBuf>,
    pub pooled: bool,

    pub maps: MapMode,
    pub maps_dir: Option<PathBuf>,
    pub map_seed: u64,
    pub peak_sigma: f64,
    pub coordinate_noise_sigma: f64,
    pub outlier_rate: f64,
    pub occluded_dropout: f64,
    pub floor: f64,

    pub stages: usize,
    pub coarse_trees: usize,
    pub fine_trees: usize,
    pub depth: usize,
    pub candidates: usize,
    pub shrinkage: f64,
    pub subsample: f64,
    /// Percent; zero disables early stopping.
    pub early_stop: f64,
    pub init: InitMode,
    pub features: FeatureMode,
    pub coarse_to_fine: bool,
    pub augment_count: usize,
    pub val_fraction: f64,
    pub ransac_iterations: usize,
    pub ransac_subset: usize,
    pub init_smoothing: Option<f64>,
    pub aug_rotation_deg: f64,
    pub aug_scale: f64,
    pub aug_translation: f64,
    pub aug_mirror_prob: f64,
    pub aug_occlusion_prob: f64,

    pub epsilon: f64,
    pub normalization: Normalization,

    pub count: usize,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub depth_mm: f64,
    pub deformation: f64,
    pub coupled: bool,
    pub mode_means: Vec<f64>,
    pub missing_rate: f64,
    pub write_maps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let maps = SynthConfig::default();
        let train = TrainConfig::default();
        let pipe = PipelineConfig::default();
        let corpus = CorpusConfig::default();
        RunConfig {
            seed: 0,
            workers: None,
            output: PathBuf::from("."),
            schema: None,
            model3d: None,
            pattern: None,
            train_data: None,
            test_data: None,
            model: None,
            cross_train: Vec::new(),
            cross_test: Vec::new(),
            pooled: true,
            maps: MapMode::Synthetic,
            maps_dir: None,
            map_seed: 0,
            peak_sigma: maps.peak_sigma,
            coordinate_noise_sigma: maps.coordinate_noise_sigma,
            outlier_rate: maps.outlier_rate,
            occluded_dropout: maps.occluded_dropout,
            floor: maps.floor,
            stages: train.stages,
            coarse_trees: train.coarse_trees,
            fine_trees: train.fine_trees,
            depth: train.depth,
            candidates: train.candidates,
            shrinkage: train.shrinkage,
            subsample: train.subsample,
            early_stop: 100.0 * train.early_stop_delta.unwrap_or(0.0),
            init: pipe.init_mode,
            features: train.feature_mode,
            coarse_to_fine: train.coarse_to_fine,
            augment_count: pipe.augment_count,
            val_fraction: pipe.val_fraction,
            ransac_iterations: pipe.ransac_iterations,
            ransac_subset: pipe.ransac_subset,
            init_smoothing: pipe.init_smoothing,
            aug_rotation_deg: pipe.augment.rotation_deg,
            aug_scale: pipe.augment.scale,
            aug_translation: pipe.augment.translation,
            aug_mirror_prob: pipe.augment.mirror_prob,
            aug_occlusion_prob: pipe.augment.occlusion_prob,
            epsilon: 8.0,
            normalization: Normalization::Height,
            count: corpus.count,
            yaw_deg: corpus.yaw_deg,
            pitch_deg: corpus.pitch_deg,
            roll_deg: corpus.roll_deg,
            depth_mm: corpus.depth,
            deformation: corpus.deformation,
            coupled: corpus.coupled,
            mode_means: corpus.mode_means,
            missing_rate: corpus.missing_rate,
            write_maps: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            peak_sigma: self.peak_sigma,
            coordinate_noise_sigma: self.coordinate_noise_sigma,
            outlier_rate: self.outlier_rate,
            occluded_dropout: self.occluded_dropout,
            floor: self.floor,
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            count: self.count,
            seed: self.seed,
            yaw_deg: self.yaw_deg,
            pitch_deg: self.pitch_deg,
            roll_deg: self.roll_deg,
            depth: self.depth_mm,
            deformation: self.deformation,
            coupled: self.coupled,
            mode_means: self.mode_means.clone(),
            missing_rate: self.missing_rate,
            maps: self.synth_config(),
            ..CorpusConfig::default()
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let base = PipelineConfig::default();
        PipelineConfig {
            train: TrainConfig {
                stages: self.stages,
                coarse_trees: self.coarse_trees,
                fine_trees: self.fine_trees,
                depth: self.depth,
                candidates: self.candidates,
                shrinkage: self.shrinkage,
                subsample: self.subsample,
                early_stop_delta: (self.early_stop > 0.0).then(|| self.early_stop / 100.0),
                coarse_to_fine: self.coarse_to_fine,
                feature_mode: self.features,
                seed: self.seed,
            },
            init_mode: self.init,
            augment: AugmentConfig {
                rotation_deg: self.aug_rotation_deg,
                scale: self.aug_scale,
                translation: self.aug_translation,
                mirror_prob: self.aug_mirror_prob,
                occlusion_prob: self.aug_occlusion_prob,
                ..base.augment
            },
            augment_count: self.augment_count,
            val_fraction: self.val_fraction,
            ransac_iterations: self.ransac_iterations,
            ransac_subset: self.ransac_subset,
            init_smoothing: self.init_smoothing,
        }
    }

    pub fn schema(&self) -> Result<Arc<LandmarkSchema>, CliError> {
        Ok(Arc::new(match &self.schema {
            Some(p) => LandmarkSchema::load(p)?,
            None => LandmarkSchema::builtin(),
        }))
    }

    pub fn assets(&self) -> Result<Assets<f64>, CliError> {
        Ok(Assets {
            model3d: match &self.model3d {
                Some(p) => Model3D::load(p)?,
                None => Model3D::builtin(),
            },
            pattern: match &self.pattern {
                Some(p) => FreakPattern::load(p)?,
                None => FreakPattern::builtin(),
            },
        })
    }

    /// Fails on referenced paths that do not exist.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let named = [
            ("schema", &self.schema),
            ("model3d", &self.model3d),
            ("pattern", &self.pattern),
            ("maps_dir", &self.maps_dir),
        ];
        for (key, path) in named {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(CliError::Usage(format!("{key} path {} does not exist", p.display())));
                }
            }
        }
        if self.maps == MapMode::Files && self.maps_dir.is_none() {
            return Err(CliError::Usage("maps = \"files\" needs maps_dir".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_library() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.pipeline(), PipelineConfig::default());
        assert_eq!(cfg.synth_config(), SynthConfig::default());
        assert_eq!(cfg.corpus_config(), CorpusConfig::default());
    }

    #[test]
    fn file_values_override_defaults() {
        let cfg: RunConfig = toml::from_str("stages = 3\ninit = \"mean\"\nfeatures = \"gray\"\nearly_stop = 0\n").unwrap();
        let p = cfg.pipeline();
        assert_eq!(p.train.stages, 3);
        assert_eq!(p.init_mode, InitMode::MeanShape);
        assert_eq!(p.train.feature_mode, FeatureMode::Gray);
        assert_eq!(p.train.early_stop_delta, None);
        assert_eq!(p.train.coarse_trees, 50);
    }

    #[test]
    fn default_header_echoes_the_published_budget() {
        let header = RunConfig::default().pipeline().header();
        assert_eq!(header[0], "T=20 K1=50 K2=50 depth=4 candidates=200 nu=0.1 eta=0.5 Z=25");
        assert!(header[1].starts_with("init=3d features=heatmap coarse_to_fine=on early_stop=1%"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("stagez = 3\n").is_err());
    }
}
