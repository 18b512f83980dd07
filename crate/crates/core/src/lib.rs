//! Facial landmark alignment from per-landmark probability maps.
//!
//! A robust 3D rigid fit (POSIT inside RANSAC, scored on the maps) gives the
//! initial shape; a cascade of gradient-boosted regression trees, coarse
//! first and then per facial part, refines positions and visibilities.
//! Everything numeric is generic over `f32`/`f64`; the aliases below fix
//! the scalar for the common cases.

// NaN-rejecting comparisons such as `!(x > 0.0)` are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod ert;
pub mod features;
pub mod heatmap;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod real;
pub mod shape;
pub mod synth;

pub use error::{Error, Result};
pub use ert::{load_model, save_model, CascadeModel, InitMode, TrainConfig};
pub use features::{FeatureMode, FreakPattern, SplitParams};
pub use heatmap::{LandmarkMaps, ProbabilityMaps, SynthConfig};
pub use metrics::{EvalReport, Normalization};
pub use pose::{Model3D, RigidPose};
pub use real::Real;
pub use shape::{BBox, Dataset, LandmarkSchema, Point2, Sample, Shape};

pub type Shape64 = Shape<f64>;
pub type Shape32 = Shape<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Maps64 = ProbabilityMaps<f64>;
pub type Maps32 = ProbabilityMaps<f32>;
pub type Model64 = CascadeModel<f64>;
pub type Model32 = CascadeModel<f32>;
