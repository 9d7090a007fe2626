//! ROC AUC via the rank-sum (Mann-Whitney) identity.

use nalgebra::DMatrix;
use tfr_core::baselines::stats::average_ranks;

use crate::MicronetError;

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Result<f64, MicronetError> {
    if scores.len() != positive.len() {
        return Err(MicronetError::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MicronetError::AucUndefined("non-finite score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MicronetError::AucUndefined(
            "fold holds a single class".into(),
        ));
    }
    let ranks = average_ranks(scores);
    let r_pos: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// One-vs-rest AUC averaged over classes; every class must occur in `labels`.
pub fn macro_auc_ovr(probs: &DMatrix<f64>, labels: &[usize]) -> Result<f64, MicronetError> {
    let classes = probs.ncols();
    if classes < 2 {
        return Err(MicronetError::AucUndefined(format!(
            "{classes} score columns"
        )));
    }
    if probs.nrows() != labels.len() {
        return Err(MicronetError::ShapeMismatch(format!(
            "{} rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for c in 0..classes {
        let scores: Vec<f64> = probs.column(c).iter().copied().collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        total += binary_auc(&scores, &positive)
            .map_err(|e| MicronetError::AucUndefined(format!("class {c}: {e}")))?;
    }
    Ok(total / classes as f64)
}
