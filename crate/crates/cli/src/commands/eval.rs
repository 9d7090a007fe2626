use std::path::{Path, PathBuf};

use tfr_core::data::load_ground_truth;
use tfr_core::rank::{evaluate, evaluate_tau_table, EvalReport, TauTable};
use tfr_core::ScoreTable;

use super::at_path;
use crate::config::EvalSection;
use crate::error::CliError;
use crate::io::{files_with_extension, read_text, write_json, write_text};

pub fn load_score_table(path: &Path) -> Result<ScoreTable, CliError> {
    let table: ScoreTable = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    table
        .validate()
        .map_err(CliError::from)
        .map_err(at_path(path))?;
    Ok(table)
}

fn collect_scores(inputs: &[PathBuf]) -> Result<Vec<ScoreTable>, CliError> {
    let mut tables = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for f in files_with_extension(input, "json")? {
                tables.push(load_score_table(&f)?);
            }
        } else {
            tables.push(load_score_table(input)?);
        }
    }
    if tables.is_empty() {
        return Err(CliError::Validation(
            "eval: no score tables given (--scores)".into(),
        ));
    }
    Ok(tables)
}

pub fn build_report(section: &EvalSection) -> Result<EvalReport, CliError> {
    if let Some(path) = &section.tau_table {
        let table = TauTable::from_csv_str(&read_text(path)?)
            .map_err(CliError::from)
            .map_err(at_path(path))?;
        return Ok(evaluate_tau_table(&table, &section.rank)?);
    }
    let truth_path = section
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Validation("eval: ground truth is required (--truth)".into()))?;
    let truth = load_ground_truth(truth_path)
        .map_err(CliError::from)
        .map_err(at_path(truth_path))?;
    let scores = collect_scores(&section.scores)?;
    Ok(evaluate(&scores, &truth, &section.rank)?)
}

pub fn run(section: &EvalSection) -> Result<(), CliError> {
    let report = build_report(section)?;
    let out = section
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("report.json"));
    write_json(&out, &report)?;
    if let Some(csv) = &section.csv {
        write_text(csv, &report.tau_csv())?;
    }
    for m in &report.metrics {
        println!("{m}: average rank {:.2}", report.average_ranks[m]);
    }
    if let Some(f) = &report.friedman {
        println!(
            "Friedman chi2 = {:.2} (dof {}), p = {:.4}",
            f.chi2, f.dof, f.p_value
        );
    }
    Ok(())
}
