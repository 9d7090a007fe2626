//! Label-prediction (S_LP) and feature-update (S_FU) transferability scores.

pub mod knn;
pub mod score;
pub mod triplet;

use thiserror::Error;

use crate::nca::NcaError;

pub use knn::{knn_label_probability, neighbor_sets, KnnConfig};
pub use score::{
    combine, combined_score, minmax_normalize, s_fu, s_lp, CombineMode, Normalized, ScoreConfig,
    Variant,
};
pub use triplet::{
    sample_triplets, triplet_loss_and_embedding_grads, Reduction, SplitMix64, Triplet,
    TripletConfig, TripletLoss,
};

#[derive(Debug, Error, PartialEq)]
pub enum TransferError {
    #[error("k-NN with k = {k} needs more than {k} samples, found {n}")]
    TooFewSamples { k: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no sample has both a same-class and an other-class partner")]
    NoValidTriplet,
    #[error("index {index} out of range for {n} samples")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("conv1 gradient norm is zero")]
    ZeroDenominator,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("need at least 2 candidates, found {found}")]
    TooFewCandidates { found: usize },
    #[error("empty candidate pool")]
    EmptyPool,
    #[error("duplicate model id `{0}` in pool")]
    DuplicateModel(String),
    #[error("candidate `{model_id}`: {source}")]
    Nca {
        model_id: String,
        #[source]
        source: NcaError,
    },
}
