pub mod eval;
pub mod report;
pub mod score;
pub mod synth;
pub mod validate;

use std::path::Path;

use crate::error::CliError;

/// Prefixes a validation message with the offending path.
pub(crate) fn at_path(path: &Path) -> impl Fn(CliError) -> CliError + '_ {
    move |e| match e {
        CliError::Validation(m) if !m.contains(&path.display().to_string()) => {
            CliError::Validation(format!("{}: {m}", path.display()))
        }
        other => other,
    }
}
