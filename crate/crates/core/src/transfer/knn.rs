use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::TransferError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Indices of the `k` nearest other samples of every row, nearest first.
/// Euclidean distance, ties to the lower index.
pub fn neighbor_sets(x: &DMatrix<f64>, k: usize) -> Result<Vec<Vec<usize>>, TransferError> {
    let n = x.nrows();
    if k == 0 || n <= k {
        return Err(TransferError::TooFewSamples { k, n });
    }
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        let xi = x.row(i);
        for j in (0..n).filter(|&j| j != i) {
            cand.push(((xi - x.row(j)).norm_squared(), j));
        }
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut top: Vec<(f64, usize)> = cand[..k].to_vec();
        top.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.push(top.into_iter().map(|(_, j)| j).collect());
    }
    Ok(out)
}

/// Leave-one-out fraction of each sample's `k` nearest neighbors that share its label.
pub fn knn_label_probability(
    x: &DMatrix<f64>,
    labels: &[usize],
    cfg: &KnnConfig,
) -> Result<Vec<f64>, TransferError> {
    if labels.len() != x.nrows() {
        return Err(TransferError::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            x.nrows()
        )));
    }
    let sets = neighbor_sets(x, cfg.k)?;
    Ok(sets
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().filter(|&&j| labels[j] == labels[i]).count() as f64 / cfg.k as f64)
        .collect())
}
