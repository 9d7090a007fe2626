//! A two-layer CNN with hand-written forward and backward passes, synthetic
//! texture/blob image tasks, and a fine-tuning oracle that turns a
//! pre-trained micro source into a test AUC.

pub mod auc;
pub mod dataset;
pub mod finetune;
pub mod net;
pub mod presets;
pub mod train;
pub mod zoo;

pub use auc::{binary_auc, macro_auc_ovr};
pub use dataset::{
    generate, generate_splits, ClassSpec, GeneratorSpec, SplitSpec, Splits, SyntheticDataset,
};
pub use finetune::{fine_tune_auc, HyperGrid};
pub use net::{forward, Forward, Gradients, Images, MicroNet, ParamGroup};
pub use train::{train, TrainConfig, Trained};
pub use zoo::{make_micro_zoo, MicroZoo, SourceSpec, ZooConfig};

#[derive(Debug, thiserror::Error)]
pub enum MicronetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("activation cache does not belong to these parameters")]
    StaleCache,
    #[error("training diverged at epoch {epoch} (lr {lr})")]
    Divergence { epoch: usize, lr: f64 },
    #[error("AUC undefined: {0}")]
    AucUndefined(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Data(#[from] tfr_core::DataError),
    #[error(transparent)]
    Transfer(#[from] tfr_core::transfer::TransferError),
}
