//! Rank-based evaluation of transferability metrics: weighted Kendall tau
//! against ground truth, per-target ranks of metrics, the Friedman test and
//! the Nemenyi critical difference.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::data::{parse_labeled_csv, DataError, GroundTruthTable, ScoreTable};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("length mismatch: {pred} predictions, {truth} ground-truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least 2 items to rank, found {0}")]
    TooFewItems(usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("row has no present value")]
    EmptyRow,
    #[error("degenerate rank matrix: {0}")]
    DegenerateRanks(String),
    #[error("no q value for alpha = {alpha}, K = {k}")]
    MissingQValue { alpha: f64, k: usize },
    #[error("unmatched ids: {0:?}")]
    IdMismatch(Vec<String>),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Positions of the items when sorted by `truth` descending (best = 0), ties
/// to the lower index.
pub fn truth_positions(truth: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| truth[b].total_cmp(&truth[a]).then(a.cmp(&b)));
    let mut pos = vec![0; truth.len()];
    for (r, &i) in order.iter().enumerate() {
        pos[i] = r;
    }
    pos
}

/// Weighted Kendall tau with additive hyperbolic weights
/// `1/(1+r_i) + 1/(1+r_j)`, where `r` is the position in the ground-truth
/// ranking. Tied pairs (in either vector) contribute zero to the numerator.
pub fn weighted_kendall_tau(pred: &[f64], truth: &[f64]) -> Result<f64, RankError> {
    if pred.len() != truth.len() {
        return Err(RankError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let k = pred.len();
    if k < 2 {
        return Err(RankError::TooFewItems(k));
    }
    if let Some(v) = pred.iter().chain(truth).find(|v| !v.is_finite()) {
        return Err(RankError::NonFinite(format!("{v} in tau input")));
    }
    let pos = truth_positions(truth);
    let weight: Vec<f64> = pos.iter().map(|&r| 1.0 / (1.0 + r as f64)).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let w = weight[i] + weight[j];
            num += w * sign(pred[i] - pred[j]) * sign(truth[i] - truth[j]);
            den += w;
        }
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    /// Ties go to the earlier column. Reproduces published tables.
    #[default]
    OrdinalByColumnOrder,
    /// Tied entries share the mean of their ranks.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingMode {
    #[default]
    LowestRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QEntry {
    pub alpha: f64,
    pub k: usize,
    pub q: f64,
}

/// Nemenyi constants `q_alpha`: two-tailed studentized range quantiles with
/// infinite degrees of freedom, divided by sqrt(2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QTable(pub Vec<QEntry>);

const NEMENYI_Q_05: [f64; 9] = [
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164,
];
const NEMENYI_Q_10: [f64; 9] = [
    1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920,
];

impl QTable {
    /// Standard table for alpha in {0.05, 0.10} and K = 2..=10.
    pub fn nemenyi() -> Self {
        let mut entries = Vec::new();
        for (alpha, qs) in [(0.05, NEMENYI_Q_05), (0.10, NEMENYI_Q_10)] {
            for (i, &q) in qs.iter().enumerate() {
                entries.push(QEntry { alpha, k: i + 2, q });
            }
        }
        Self(entries)
    }

    pub fn get(&self, alpha: f64, k: usize) -> Option<f64> {
        self.0
            .iter()
            .find(|e| e.k == k && (e.alpha - alpha).abs() < 1e-12)
            .map(|e| e.q)
    }
}

impl Default for QTable {
    fn default() -> Self {
        Self::nemenyi()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankConfig {
    pub tie_mode: TieMode,
    pub missing_mode: MissingMode,
    pub alpha: f64,
    pub q_table: QTable,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            tie_mode: TieMode::default(),
            missing_mode: MissingMode::default(),
            alpha: 0.05,
            q_table: QTable::nemenyi(),
        }
    }
}

impl RankConfig {
    pub fn validate(&self) -> Result<(), RankError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(RankError::InvalidConfig(format!(
                "alpha {} not in (0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Ranks 1..K of one row of scores, higher value = better (lower) rank.
///
/// Missing entries take the bottom ranks: in ordinal mode the first missing
/// column gets K, the next K-1, and so on; in average mode they share the
/// mean of the bottom block.
pub fn ordinal_ranks(row: &[Option<f64>], tie_mode: TieMode) -> Result<Vec<f64>, RankError> {
    let k = row.len();
    let mut present: Vec<usize> = (0..k).filter(|&i| row[i].is_some()).collect();
    if present.is_empty() {
        return Err(RankError::EmptyRow);
    }
    if let Some(v) = row.iter().flatten().find(|v| !v.is_finite()) {
        return Err(RankError::NonFinite(format!("{v} in rank row")));
    }
    let value = |i: usize| row[i].expect("present");
    present.sort_by(|&a, &b| value(b).total_cmp(&value(a)).then(a.cmp(&b)));
    let missing: Vec<usize> = (0..k).filter(|&i| row[i].is_none()).collect();
    let mut ranks = vec![0.0; k];
    match tie_mode {
        TieMode::OrdinalByColumnOrder => {
            for (r, &i) in present.iter().enumerate() {
                ranks[i] = (r + 1) as f64;
            }
            for (m, &i) in missing.iter().enumerate() {
                ranks[i] = (k - m) as f64;
            }
        }
        TieMode::Average => {
            let mut start = 0;
            while start < present.len() {
                let mut end = start + 1;
                while end < present.len() && value(present[end]) == value(present[start]) {
                    end += 1;
                }
                // positions start..end hold ranks start+1..=end
                let shared = (start + 1 + end) as f64 / 2.0;
                for &i in &present[start..end] {
                    ranks[i] = shared;
                }
                start = end;
            }
            let shared = (present.len() + 1 + k) as f64 / 2.0;
            for &i in &missing {
                ranks[i] = shared;
            }
        }
    }
    Ok(ranks)
}

/// Column means of an N x K rank matrix.
pub fn average_ranks(rank_matrix: &[Vec<f64>]) -> Result<Vec<f64>, RankError> {
    let k = check_rectangular(rank_matrix)?;
    let n = rank_matrix.len() as f64;
    Ok((0..k)
        .map(|j| rank_matrix.iter().map(|row| row[j]).sum::<f64>() / n)
        .collect())
}

fn check_rectangular(rank_matrix: &[Vec<f64>]) -> Result<usize, RankError> {
    let first = rank_matrix
        .first()
        .ok_or_else(|| RankError::DegenerateRanks("no rows".into()))?;
    let k = first.len();
    if let Some(row) = rank_matrix.iter().find(|r| r.len() != k) {
        return Err(RankError::DegenerateRanks(format!(
            "row of length {} in a matrix of width {k}",
            row.len()
        )));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub chi2: f64,
    pub p_value: f64,
    pub dof: usize,
    pub n: usize,
    pub k: usize,
}

/// Friedman chi-square statistic over an N x K rank matrix with the p-value
/// from the chi-square survival function with K-1 degrees of freedom.
pub fn friedman_test(rank_matrix: &[Vec<f64>]) -> Result<FriedmanResult, RankError> {
    let k = check_rectangular(rank_matrix)?;
    let n = rank_matrix.len();
    if n < 2 || k < 3 {
        return Err(RankError::DegenerateRanks(format!(
            "need N >= 2 and K >= 3, got N = {n}, K = {k}"
        )));
    }
    let expected_sum = (k * (k + 1)) as f64 / 2.0;
    for (i, row) in rank_matrix.iter().enumerate() {
        if row.iter().any(|&r| !(1.0..=k as f64).contains(&r)) {
            return Err(RankError::DegenerateRanks(format!(
                "row {i} has a rank outside 1..={k}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - expected_sum).abs() > 1e-9 {
            return Err(RankError::DegenerateRanks(format!(
                "row {i} ranks sum to {sum}, expected {expected_sum}"
            )));
        }
    }
    let avg = average_ranks(rank_matrix)?;
    let (nf, kf) = (n as f64, k as f64);
    let chi2 = 12.0 * nf / (kf * (kf + 1.0)) * avg.iter().map(|r| r * r).sum::<f64>()
        - 3.0 * nf * (kf + 1.0);
    // guard tiny negative round-off when all average ranks are equal
    let chi2 = chi2.max(0.0);
    let dof = k - 1;
    let p_value = if chi2 > 0.0 {
        gamma_ur(dof as f64 / 2.0, chi2 / 2.0)
    } else {
        1.0
    };
    Ok(FriedmanResult {
        chi2,
        p_value,
        dof,
        n,
        k,
    })
}

/// `q * sqrt(K (K + 1) / (6 N))`.
pub fn critical_difference_with_q(k: usize, n: usize, q: f64) -> f64 {
    q * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt()
}

pub fn critical_difference(
    k: usize,
    n: usize,
    alpha: f64,
    q_table: &QTable,
) -> Result<f64, RankError> {
    let q = q_table
        .get(alpha, k)
        .ok_or(RankError::MissingQValue { alpha, k })?;
    Ok(critical_difference_with_q(k, n, q))
}

/// Per-target tau values of several metrics; `None` marks a metric that
/// produced no ranking for that target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauTable {
    pub targets: Vec<String>,
    pub metrics: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl TauTable {
    /// `target,<metric>...` header; blank or `-` cells are missing.
    pub fn from_csv_str(text: &str) -> Result<Self, RankError> {
        let (metrics, targets, values) = parse_labeled_csv(text)?;
        let t = Self {
            targets,
            metrics,
            values,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), RankError> {
        for ids in [&self.targets, &self.metrics] {
            let mut seen = BTreeSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(DataError::DuplicateIdentifier(id.clone()).into());
                }
            }
        }
        if self.values.len() != self.targets.len()
            || self.values.iter().any(|r| r.len() != self.metrics.len())
        {
            return Err(DataError::DimensionMismatch {
                field: "tau table".into(),
                expected: self.targets.len() * self.metrics.len(),
                found: self.values.iter().map(Vec::len).sum(),
            }
            .into());
        }
        if let Some(v) = self
            .values
            .iter()
            .flatten()
            .flatten()
            .find(|v| !(-1.0..=1.0).contains(*v))
        {
            return Err(RankError::NonFinite(format!(
                "tau value {v} outside [-1, 1]"
            )));
        }
        Ok(())
    }

    pub fn rank_matrix(&self, tie_mode: TieMode) -> Result<Vec<Vec<f64>>, RankError> {
        self.values
            .iter()
            .map(|row| ordinal_ranks(row, tie_mode))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub tie_mode: TieMode,
    pub alpha: f64,
    /// Targets in table order.
    pub targets: Vec<String>,
    /// Metrics in table order.
    pub metrics: Vec<String>,
    /// target -> metric -> tau; `None` when the metric gave no ranking.
    pub tau: BTreeMap<String, BTreeMap<String, Option<f64>>>,
    pub ranks: BTreeMap<String, BTreeMap<String, f64>>,
    pub average_ranks: BTreeMap<String, f64>,
    pub friedman: Option<FriedmanResult>,
    pub critical_difference: Option<f64>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// `target,<metric>...` rows of `tau (rank)` plus a final average-rank row.
    pub fn tau_csv(&self) -> String {
        let mut out = String::from("target");
        for m in &self.metrics {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for t in &self.targets {
            out.push_str(t);
            for m in &self.metrics {
                let tau = self.tau[t][m];
                let rank = self.ranks[t][m];
                match tau {
                    Some(v) => out.push_str(&format!(",{v:.2} ({rank})")),
                    None => out.push_str(&format!(",- ({rank})")),
                }
            }
            out.push('\n');
        }
        out.push_str("avg_rank");
        for m in &self.metrics {
            out.push_str(&format!(",{:.2}", self.average_ranks[m]));
        }
        out.push('\n');
        out
    }
}

/// Ranks, averages, Friedman test and critical difference for a table of
/// tau values.
pub fn evaluate_tau_table(table: &TauTable, cfg: &RankConfig) -> Result<EvalReport, RankError> {
    cfg.validate()?;
    table.validate()?;
    let rank_matrix = table.rank_matrix(cfg.tie_mode)?;
    let avg = average_ranks(&rank_matrix)?;
    let mut notes = Vec::new();
    let mut tau = BTreeMap::new();
    let mut ranks = BTreeMap::new();
    for (t, target) in table.targets.iter().enumerate() {
        let mut tau_row = BTreeMap::new();
        let mut rank_row = BTreeMap::new();
        for (m, metric) in table.metrics.iter().enumerate() {
            tau_row.insert(metric.clone(), table.values[t][m]);
            rank_row.insert(metric.clone(), rank_matrix[t][m]);
            if table.values[t][m].is_none() {
                notes.push(format!(
                    "{metric} has no tau for {target}; assigned rank {}",
                    rank_matrix[t][m]
                ));
            }
        }
        tau.insert(target.clone(), tau_row);
        ranks.insert(target.clone(), rank_row);
    }
    let (n, k) = (table.targets.len(), table.metrics.len());
    let friedman = match friedman_test(&rank_matrix) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("Friedman test skipped: {e}"));
            None
        }
    };
    let critical_difference = match critical_difference(k, n, cfg.alpha, &cfg.q_table) {
        Ok(cd) => Some(cd),
        Err(e) => {
            notes.push(format!("critical difference skipped: {e}"));
            None
        }
    };
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tie_mode: cfg.tie_mode,
        alpha: cfg.alpha,
        targets: table.targets.clone(),
        metrics: table.metrics.clone(),
        tau,
        ranks,
        average_ranks: table.metrics.iter().cloned().zip(avg).collect(),
        friedman,
        critical_difference,
        notes,
    })
}

/// Tau of every score table against the ground-truth column of its target.
///
/// Candidates whose ground truth is missing (e.g. self-source pairs) are left
/// out of that target's tau. Targets follow ground-truth column order and
/// metrics the order of first appearance.
pub fn tau_table_from_scores(
    scores: &[ScoreTable],
    truth: &GroundTruthTable,
) -> Result<TauTable, RankError> {
    let mut unmatched = BTreeSet::new();
    for table in scores {
        if truth.column_index(&table.target).is_none() {
            unmatched.insert(format!("target:{}", table.target));
        }
        for id in table.scores.keys() {
            if truth.row_index(id).is_none() {
                unmatched.insert(format!("model:{id}"));
            }
        }
    }
    if !unmatched.is_empty() {
        return Err(RankError::IdMismatch(unmatched.into_iter().collect()));
    }
    let mut metrics: Vec<String> = Vec::new();
    for table in scores {
        if !metrics.contains(&table.metric_name) {
            metrics.push(table.metric_name.clone());
        }
    }
    let targets: Vec<String> = truth
        .columns
        .iter()
        .filter(|c| scores.iter().any(|s| &s.target == *c))
        .cloned()
        .collect();
    let mut values = vec![vec![None; metrics.len()]; targets.len()];
    for table in scores {
        let t = targets
            .iter()
            .position(|x| *x == table.target)
            .expect("target collected");
        let m = metrics
            .iter()
            .position(|x| *x == table.metric_name)
            .expect("metric collected");
        if values[t][m].is_some() {
            return Err(RankError::InvalidConfig(format!(
                "two score tables for metric `{}` on target `{}`",
                table.metric_name, table.target
            )));
        }
        let (pred, gt): (Vec<f64>, Vec<f64>) = table
            .scores
            .iter()
            .filter_map(|(id, &s)| truth.get(id, &table.target).map(|g| (s, g)))
            .unzip();
        values[t][m] = if pred.len() >= 2 {
            Some(weighted_kendall_tau(&pred, &gt)?)
        } else {
            log::warn!(
                "fewer than 2 candidates with ground truth for `{}` on `{}`",
                table.metric_name,
                table.target
            );
            None
        };
    }
    Ok(TauTable {
        targets,
        metrics,
        values,
    })
}

pub fn evaluate(
    scores: &[ScoreTable],
    truth: &GroundTruthTable,
    cfg: &RankConfig,
) -> Result<EvalReport, RankError> {
    let table = tau_table_from_scores(scores, truth)?;
    evaluate_tau_table(&table, cfg)
}
