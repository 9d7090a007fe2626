//! Reference transferability metrics (LEEP, NLEEP, LogME, PARC) and the
//! statistics they are built from.

pub mod gmm;
pub mod leep;
pub mod logme;
pub mod parc;
pub mod pca;
pub mod stats;

use thiserror::Error;

pub use gmm::{fit_gmm, GmmConfig, GmmModel};
pub use leep::{leep, nleep, NleepConfig};
pub use logme::logme;
pub use parc::parc;
pub use pca::{pca, Pca};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} at index {index} outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("probability row {row} sums to {sum}, expected 1")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("EM collapsed a mixture component after {restarts} restarts")]
    EmCollapse { restarts: u64 },
    #[error("rank deficiency: {0}")]
    RankDeficiency(String),
    #[error("SVD did not converge")]
    SvdFailure,
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub(crate) fn check_labels(
    labels: &[usize],
    n: usize,
    classes: usize,
) -> Result<(), BaselineError> {
    if labels.len() != n {
        return Err(BaselineError::ShapeMismatch(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(BaselineError::LabelOutOfRange {
            index,
            label,
            classes,
        });
    }
    Ok(())
}
