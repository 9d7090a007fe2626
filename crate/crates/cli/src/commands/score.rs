use std::path::{Path, PathBuf};

use tfr_core::data::{load_bundle, load_target_set, CandidateBundle};
use tfr_core::metrics::score_pool;
use tfr_core::ScoreTable;

use super::at_path;
use crate::config::ScoreSection;
use crate::error::CliError;
use crate::io::{files_with_extension, write_json};

pub fn load_pool(dir: &Path) -> Result<Vec<CandidateBundle>, CliError> {
    let files = files_with_extension(dir, "tfrb")?;
    if files.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no .tfrb bundles",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|p| load_bundle(p).map_err(CliError::from).map_err(at_path(p)))
        .collect()
}

/// Scores the pool under every configured metric; returns the tables in
/// metric order.
pub fn score_tables(section: &ScoreSection, seed: u64) -> Result<Vec<ScoreTable>, CliError> {
    let target_path = section
        .target
        .as_ref()
        .ok_or_else(|| CliError::Validation("score: a target set is required (--target)".into()))?;
    let bundle_dir = section.bundles.as_ref().ok_or_else(|| {
        CliError::Validation("score: a bundle directory is required (--bundles)".into())
    })?;
    if section.metrics.is_empty() {
        return Err(CliError::Validation("score: no metrics requested".into()));
    }
    let target = load_target_set(target_path)
        .map_err(CliError::from)
        .map_err(at_path(target_path))?;
    let bundles = load_pool(bundle_dir)?;
    let mut params = section.params;
    params.nca.seed = seed;
    let mut tables = Vec::with_capacity(section.metrics.len());
    for &metric in &section.metrics {
        let table = score_pool(metric, &target, &bundles, section.direction, &params)?;
        table.validate()?;
        tables.push(table);
    }
    Ok(tables)
}

pub fn run(section: &ScoreSection, seed: u64) -> Result<(), CliError> {
    let out = section
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("scores"));
    for table in score_tables(section, seed)? {
        write_json(&out.join(format!("{}.json", table.metric_name)), &table)?;
        if let Some((id, s)) = table.argmax_model() {
            println!("{}: best candidate {id} ({s:.4})", table.metric_name);
        }
    }
    Ok(())
}
