//! Either kind of map source behind one type.

use ertalign::heatmap::BlobMaps;
use ertalign::pipeline::{MapFiles, MapSource, SyntheticMaps};
use ertalign::{LandmarkMaps, ProbabilityMaps, Result, Sample};

use crate::config::{MapMode, RunConfig};

pub enum Source {
    Synthetic(SyntheticMaps),
    Files(MapFiles),
}

pub enum AnyMaps {
    Blob(BlobMaps<f64>),
    Dense(ProbabilityMaps<f64>),
}

impl Source {
    pub fn from_config(cfg: &RunConfig) -> Self {
        match (cfg.maps, &cfg.maps_dir) {
            (MapMode::Files, Some(dir)) => Source::Files(MapFiles { dir: dir.clone() }),
            _ => Source::Synthetic(SyntheticMaps::new(cfg.synth_config(), cfg.map_seed)),
        }
    }
}

impl MapSource<f64> for Source {
    type Maps = AnyMaps;
    fn maps(&self, sample: &Sample<f64>) -> Result<AnyMaps> {
        match self {
            Source::Synthetic(s) => s.maps(sample).map(AnyMaps::Blob),
            Source::Files(f) => f.maps(sample).map(AnyMaps::Dense),
        }
    }
}

impl LandmarkMaps<f64> for AnyMaps {
    fn landmark_count(&self) -> usize {
        match self {
            AnyMaps::Blob(m) => m.landmark_count(),
            AnyMaps::Dense(m) => m.landmark_count(),
        }
    }

    fn size(&self) -> (usize, usize) {
        match self {
            AnyMaps::Blob(m) => m.size(),
            AnyMaps::Dense(m) => m.size(),
        }
    }

    fn value_at(&self, landmark: usize, x: i64, y: i64) -> f64 {
        match self {
            AnyMaps::Blob(m) => m.value_at(landmark, x, y),
            AnyMaps::Dense(m) => m.value_at(landmark, x, y),
        }
    }

    fn peak(&self, landmark: usize) -> (usize, usize) {
        match self {
            AnyMaps::Blob(m) => m.peak(landmark),
            AnyMaps::Dense(m) => m.peak(landmark),
        }
    }
}
