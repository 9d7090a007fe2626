use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::gmm::{fit_gmm, GmmConfig};
use super::pca::pca;
use super::{check_labels, BaselineError};

const ROW_TOL: f64 = 1e-6;

/// Log expected empirical prediction of target labels from source-class
/// probabilities `theta` (`n x Z`, rows summing to 1).
///
/// Source classes that receive no probability mass are dropped before the
/// conditional `P(y | z)` is formed.
pub fn leep(theta: &DMatrix<f64>, labels: &[usize], classes: usize) -> Result<f64, BaselineError> {
    let (n, z) = theta.shape();
    if n == 0 {
        return Err(BaselineError::TooFewSamples {
            needed: 1,
            found: 0,
        });
    }
    check_labels(labels, n, classes)?;
    for (i, row) in theta.row_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > ROW_TOL || row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(BaselineError::RowNotNormalized { row: i, sum });
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut joint = DMatrix::<f64>::zeros(classes, z);
    for (i, &y) in labels.iter().enumerate() {
        for k in 0..z {
            joint[(y, k)] += theta[(i, k)] * inv_n;
        }
    }
    let mut conditional = DMatrix::<f64>::zeros(classes, z);
    for k in 0..z {
        let mass: f64 = joint.column(k).sum();
        if mass > 0.0 {
            for y in 0..classes {
                conditional[(y, k)] = joint[(y, k)] / mass;
            }
        }
    }

    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let eep: f64 = (0..z).map(|k| conditional[(y, k)] * theta[(i, k)]).sum();
        // eep <= 1 exactly; clip round-off
        total += eep.min(1.0).ln();
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NleepConfig {
    pub variance_keep: f64,
    /// `None` uses one component per target class.
    pub components: Option<usize>,
    pub seed: u64,
}

impl Default for NleepConfig {
    fn default() -> Self {
        Self {
            variance_keep: 0.8,
            components: None,
            seed: 0,
        }
    }
}

/// LEEP with GMM responsibilities in a PCA-reduced embedding space standing in
/// for the source head.
pub fn nleep(
    embeddings: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    cfg: &NleepConfig,
) -> Result<f64, BaselineError> {
    check_labels(labels, embeddings.nrows(), classes)?;
    let k = cfg.components.unwrap_or(classes);
    if embeddings.nrows() <= k {
        return Err(BaselineError::TooFewSamples {
            needed: k + 1,
            found: embeddings.nrows(),
        });
    }
    let (_, reduced) = pca(embeddings, cfg.variance_keep)?;
    let gmm = fit_gmm(&reduced, &GmmConfig::new(k, cfg.seed))?;
    let resp = gmm.responsibilities(&reduced)?;
    leep(&resp, labels, classes)
}
