use std::path::Path;

use tfr_core::metrics::MetricError;
use tfr_core::rank::RankError;
use tfr_core::transfer::TransferError;
use tfr_core::DataError;
use tfr_micronet::MicronetError;
use thiserror::Error;

/// Every failure maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TransferError> for CliError {
    fn from(e: TransferError) -> Self {
        match e {
            TransferError::TooFewCandidates { .. }
            | TransferError::TooFewSamples { .. }
            | TransferError::NoValidTriplet => CliError::Precondition(e.to_string()),
            TransferError::ShapeMismatch(_)
            | TransferError::IndexOutOfRange { .. }
            | TransferError::InvalidConfig(_)
            | TransferError::DuplicateModel(_)
            | TransferError::EmptyPool => CliError::Validation(e.to_string()),
            TransferError::ZeroDenominator
            | TransferError::NonFinite(_)
            | TransferError::Nca { .. } => CliError::Numeric(error_chain(&e)),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::UnknownMetric(_) => CliError::Validation(e.to_string()),
            MetricError::Precondition { .. } => CliError::Precondition(e.to_string()),
            MetricError::Baseline { .. } => CliError::Numeric(error_chain(&e)),
            MetricError::Transfer(t) => t.into(),
        }
    }
}

impl From<RankError> for CliError {
    fn from(e: RankError) -> Self {
        match e {
            RankError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(error_chain(&e)),
        }
    }
}

impl From<MicronetError> for CliError {
    fn from(e: MicronetError) -> Self {
        match e {
            MicronetError::InvalidSpec(_) | MicronetError::Data(_) => {
                CliError::Validation(e.to_string())
            }
            MicronetError::Transfer(t) => t.into(),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

/// `outer: inner: ...` for errors whose Display omits their source.
fn error_chain(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        let msg = s.to_string();
        if !out.contains(&msg) {
            out.push_str(": ");
            out.push_str(&msg);
        }
        cur = s.source();
    }
    out
}
