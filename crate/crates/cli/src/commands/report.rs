use std::fmt::Write;

use tfr_core::data::load_ground_truth;
use tfr_core::fixtures;
use tfr_core::rank::EvalReport;
use tfr_core::GroundTruthTable;

use super::at_path;
use crate::config::ReportSection;
use crate::error::CliError;
use crate::io::{read_text, write_text};

pub fn load_truth(spec: &str) -> Result<GroundTruthTable, CliError> {
    match spec {
        "fixture:source-datasets" => Ok(fixtures::source_datasets_auc()),
        "fixture:architectures" => Ok(fixtures::architectures_auc()),
        s if s.starts_with("fixture:") => Err(CliError::Validation(format!(
            "unknown fixture `{s}` (known: fixture:source-datasets, fixture:architectures)"
        ))),
        path => {
            let p = std::path::Path::new(path);
            load_ground_truth(p)
                .map_err(CliError::from)
                .map_err(at_path(p))
        }
    }
}

pub fn best_sources(truth: &GroundTruthTable) -> String {
    let mut out = String::new();
    for col in &truth.columns {
        if let Some((id, v)) = truth.best_source(col) {
            let _ = writeln!(out, "best source for {col}: {id} ({v:.2})");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub wins: usize,
    pub compared: usize,
}

/// Targets on which `a` scores strictly above `b`. Targets where either
/// value is missing are skipped; with `exclude_self`, so are targets named
/// `a` or `b`.
pub fn compare(
    truth: &GroundTruthTable,
    a: &str,
    b: &str,
    exclude_self: bool,
) -> Result<Comparison, CliError> {
    for id in [a, b] {
        if truth.row_index(id).is_none() {
            return Err(CliError::Validation(format!("unknown source `{id}`")));
        }
    }
    let mut wins = 0;
    let mut compared = 0;
    for col in &truth.columns {
        if exclude_self && (col == a || col == b) {
            continue;
        }
        if let (Some(va), Some(vb)) = (truth.get(a, col), truth.get(b, col)) {
            compared += 1;
            wins += (va > vb) as usize;
        }
    }
    Ok(Comparison { wins, compared })
}

pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let width = report
        .targets
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(6)
        .max(8);
    let col = report
        .metrics
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(4)
        .max(10);
    let _ = write!(out, "{:width$}", "target");
    for m in &report.metrics {
        let _ = write!(out, " {m:>col$}");
    }
    out.push('\n');
    for t in &report.targets {
        let _ = write!(out, "{t:width$}");
        for m in &report.metrics {
            let cell = match report.tau[t][m] {
                Some(v) => format!("{v:.2} ({})", report.ranks[t][m]),
                None => format!("- ({})", report.ranks[t][m]),
            };
            let _ = write!(out, " {cell:>col$}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:width$}", "avg rank");
    for m in &report.metrics {
        let _ = write!(out, " {:>col$.2}", report.average_ranks[m]);
    }
    out.push('\n');
    if let Some(f) = &report.friedman {
        let _ = writeln!(
            out,
            "Friedman test: chi2 = {:.2} with {} dof over {} targets, p = {:.4}",
            f.chi2, f.dof, f.n, f.p_value
        );
    }
    if let Some(cd) = report.critical_difference {
        let (best, best_rank) = report
            .average_ranks
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(m, r)| (m.as_str(), *r))
            .unwrap_or(("-", f64::NAN));
        let beaten: Vec<&str> = report
            .metrics
            .iter()
            .filter(|m| report.average_ranks[*m] - best_rank > cd)
            .map(String::as_str)
            .collect();
        let _ = writeln!(
            out,
            "critical difference (alpha = {}): {cd:.3}",
            report.alpha
        );
        if beaten.is_empty() {
            let _ = writeln!(out, "{best} (avg rank {best_rank:.2}) is not significantly better than any other metric");
        } else {
            let _ = writeln!(
                out,
                "{best} (avg rank {best_rank:.2}) is significantly better than: {}",
                beaten.join(", ")
            );
        }
    }
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

pub fn run(section: &ReportSection) -> Result<String, CliError> {
    let mut out = String::new();
    if let Some(path) = &section.input {
        let report: EvalReport = serde_json::from_str(&read_text(path)?).map_err(|e| {
            CliError::Validation(format!("{}: malformed report: {e}", path.display()))
        })?;
        out.push_str(&render_report(&report));
    }
    if let Some(spec) = &section.truth {
        let truth = load_truth(spec)?;
        out.push_str(&best_sources(&truth));
        for cell in &section.lookup {
            let (source, target) = cell.split_once(':').ok_or_else(|| {
                CliError::Validation(format!("lookup `{cell}` is not source:target"))
            })?;
            match truth.get(source, target) {
                Some(v) => {
                    let _ = writeln!(out, "{source} -> {target}: {v:.2}");
                }
                None if truth.row_index(source).is_some()
                    && truth.column_index(target).is_some() =>
                {
                    let _ = writeln!(out, "{source} -> {target}: -");
                }
                None => {
                    return Err(CliError::Validation(format!(
                        "lookup `{cell}`: unknown source or target"
                    )))
                }
            }
        }
        match section.compare.as_slice() {
            [] => {}
            [a, b] => {
                let c = compare(&truth, a, b, section.exclude_self)?;
                let scope = if section.exclude_self {
                    " (self targets excluded)"
                } else {
                    ""
                };
                let _ = writeln!(
                    out,
                    "{a} vs {b}: {a} better on {} of {} targets{scope}",
                    c.wins, c.compared
                );
            }
            other => {
                return Err(CliError::Validation(format!(
                    "compare takes two source ids, got {}",
                    other.len()
                )));
            }
        }
    } else if !section.compare.is_empty() || !section.lookup.is_empty() {
        return Err(CliError::Validation(
            "compare and lookup need a ground-truth table (--truth)".into(),
        ));
    }
    if section.input.is_none() && section.truth.is_none() {
        return Err(CliError::Validation(
            "report: give --input and/or --truth".into(),
        ));
    }
    if let Some(path) = &section.out {
        write_text(path, &out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_best_sources() {
        let text = best_sources(&fixtures::source_datasets_auc());
        assert!(text.contains("best source for OCT: RadImageNet (96.93)\n"));
        let text = best_sources(&fixtures::architectures_auc());
        assert!(text.contains("best source for Derma: ConvNeXt (92.93)\n"));
    }

    #[test]
    fn breast_vs_organs() {
        let truth = fixtures::source_datasets_auc();
        assert_eq!(
            compare(&truth, "Breast", "OrganS", true).unwrap(),
            Comparison {
                wins: 7,
                compared: 9
            }
        );
    }

    #[test]
    fn unknown_fixture() {
        assert!(load_truth("fixture:nope").is_err());
    }
}
