//! Gradient-boosted ensemble of regression trees.

mod cascade;
mod model_io;
mod parts;
mod tree;

pub use cascade::{
    apply_stage, train_cascade, CascadeModel, InitMode, Prediction, StageLog, StopReason, TrainConfig, TrainSample,
    TrainingLog, ValidationOverride,
};
pub use model_io::{decode_model, encode_model, load_model, save_model};
pub use parts::{masked_loss, train_parts, PartRegressor, PartsConfig, PartsStage};
pub use tree::{fit_node, fit_tree, partition, sum_squared_error, Leaf, Node, NodeSplit, RegressionTree, Residuals, TreeData, TreeParams};
