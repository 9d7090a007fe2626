//! Transferability estimation for pre-trained models: data formats, the
//! NCA-based label-prediction and feature-update scores, reference metrics,
//! and rank-based evaluation against fine-tuning ground truth.

pub mod baselines;
pub mod data;
pub mod fixtures;
pub mod metrics;
pub mod nca;
pub mod rank;
pub mod transfer;

pub use data::{
    load_bundle, load_ground_truth, load_target_set, save_bundle, save_ground_truth,
    save_target_set, CandidateBundle, DataError, Direction, GradNorms, GroundTruthTable,
    ScoreComponents, ScoreTable, TargetSet,
};
pub use metrics::{score_pool, Metric, MetricConfig, MetricError};
