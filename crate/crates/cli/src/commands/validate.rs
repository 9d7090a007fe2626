use std::path::Path;

use tfr_core::data::{load_bundle, load_target_set, RawBundle};
use tfr_core::rank::{EvalReport, TauTable};
use tfr_core::GroundTruthTable;

use super::at_path;
use super::eval::load_score_table;
use super::synth::Manifest;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{read_text, sha256_file};

fn bad(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {msg}", path.display()))
}

fn check_manifest(path: &Path, manifest: &Manifest) -> Result<String, CliError> {
    let root = path.parent().unwrap_or(Path::new("."));
    for (rel, want) in &manifest.files {
        let got = sha256_file(&root.join(rel))?;
        if &got != want {
            return Err(bad(path, format!("hash mismatch for {rel}")));
        }
    }
    Ok(format!("manifest, {} files verified", manifest.files.len()))
}

fn check_one(path: &Path) -> Result<String, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "tfrb" => {
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            let raw = RawBundle::decode(&bytes).map_err(|e| bad(path, e))?;
            if raw.labels.is_some() {
                let t = load_target_set(path).map_err(|e| bad(path, e))?;
                Ok(format!(
                    "target set `{}`: {} x {}, {} classes",
                    t.name,
                    t.n(),
                    t.dim(),
                    t.num_classes
                ))
            } else {
                let b = load_bundle(path).map_err(|e| bad(path, e))?;
                Ok(format!(
                    "bundle `{}`: {} x {}, source probs: {}, grad norms: {}",
                    b.model_id,
                    b.n(),
                    b.embeddings.ncols(),
                    if b.source_probs.is_some() {
                        "yes"
                    } else {
                        "no"
                    },
                    if b.grad_norms.is_some() { "yes" } else { "no" },
                ))
            }
        }
        "csv" => {
            let text = read_text(path)?;
            if text.trim_start().starts_with("target") {
                let t = TauTable::from_csv_str(&text).map_err(|e| bad(path, e))?;
                Ok(format!(
                    "tau table: {} targets x {} metrics",
                    t.targets.len(),
                    t.metrics.len()
                ))
            } else {
                let t = GroundTruthTable::from_csv_str(&text).map_err(|e| bad(path, e))?;
                Ok(format!(
                    "ground truth: {} sources x {} targets, {} missing",
                    t.rows.len(),
                    t.columns.len(),
                    t.missing_count()
                ))
            }
        }
        "json" => {
            let text = read_text(path)?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(path, e))?;
            if path.to_string_lossy().ends_with(".meta.json") {
                return Ok("bundle sidecar".into());
            }
            if value.get("files").is_some() {
                let m: Manifest = serde_json::from_value(value).map_err(|e| bad(path, e))?;
                check_manifest(path, &m)
            } else if value.get("schema_version").is_some() {
                let r: EvalReport = serde_json::from_value(value).map_err(|e| bad(path, e))?;
                Ok(format!(
                    "eval report: {} targets x {} metrics",
                    r.targets.len(),
                    r.metrics.len()
                ))
            } else {
                let t = load_score_table(path)?;
                Ok(format!(
                    "score table `{}` for `{}`: {} candidates",
                    t.metric_name,
                    t.target,
                    t.scores.len()
                ))
            }
        }
        "toml" => {
            RunConfig::load(path)?;
            Ok("run config".into())
        }
        _ => Err(bad(path, "unrecognized file type")),
    }
}

/// One `ok` line per path; stops at the first invalid file.
pub fn run(paths: &[impl AsRef<Path>]) -> Result<Vec<String>, CliError> {
    paths
        .iter()
        .map(|p| {
            let p = p.as_ref();
            check_one(p)
                .map_err(at_path(p))
                .map(|kind| format!("ok {}: {kind}", p.display()))
        })
        .collect()
}
