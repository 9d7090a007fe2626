use nalgebra::DMatrix;

use super::stats::{pearson, spearman};
use super::{check_labels, BaselineError};

/// `1 - Pearson(a, b)`; zero-variance vectors count as distance 1.
fn correlation_distance(a: &[f64], b: &[f64], warned: &mut bool) -> f64 {
    match pearson(a, b) {
        Some(r) => 1.0 - r,
        None => {
            if !*warned {
                log::warn!("constant vector in PARC distance; using distance 1");
                *warned = true;
            }
            1.0
        }
    }
}

/// Spearman correlation between the strict lower triangles of the feature and
/// one-hot label correlation-distance matrices.
pub fn parc(
    embeddings: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
) -> Result<f64, BaselineError> {
    let n = embeddings.nrows();
    if n < 3 {
        return Err(BaselineError::TooFewSamples {
            needed: 3,
            found: n,
        });
    }
    check_labels(labels, n, classes)?;
    let rows: Vec<Vec<f64>> = embeddings
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    let onehots: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            (0..classes)
                .map(|c| if c == y { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let pairs = n * (n - 1) / 2;
    let mut feature_dist = Vec::with_capacity(pairs);
    let mut label_dist = Vec::with_capacity(pairs);
    let mut warned = false;
    for i in 1..n {
        for j in 0..i {
            feature_dist.push(correlation_distance(&rows[i], &rows[j], &mut warned));
            label_dist.push(correlation_distance(&onehots[i], &onehots[j], &mut warned));
        }
    }
    spearman(&feature_dist, &label_dist).ok_or(BaselineError::ZeroVariance(
        "all pairwise distances are equal".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn class_aligned_features_give_one() {
        let y = vec![0, 1, 2, 0, 1, 2, 1];
        let x = DMatrix::from_fn(7, 3, |i, j| if y[i] == j { 1.0 } else { 0.0 });
        assert_eq!(parc(&x, &y, 3).unwrap(), 1.0);
    }

    /// Hand-rolled ranks then Pearson on a 4-point instance.
    #[test]
    fn matches_rank_then_pearson_oracle() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 2.0, 4.0, 0.5, 2.5, 1.0, 3.0, 1.0, 0.0, 2.0, 2.0, 3.5],
        );
        let y = vec![0, 1, 0, 1];
        let pr = |a: &[f64], b: &[f64]| {
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let cov: f64 = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum();
            let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&a| {
                    let below = v.iter().filter(|&&b| b < a).count() as f64;
                    let equal = v.iter().filter(|&&b| b == a).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let mut df = Vec::new();
        let mut dy = Vec::new();
        for i in 1..4 {
            for j in 0..i {
                let xi: Vec<f64> = x.row(i).iter().copied().collect();
                let xj: Vec<f64> = x.row(j).iter().copied().collect();
                df.push(1.0 - pr(&xi, &xj));
                dy.push(if y[i] == y[j] { 0.0 } else { 2.0 });
            }
        }
        let want = pr(&rank(&df), &rank(&dy));
        assert_eq!(parc(&x, &y, 2).unwrap(), want);
    }

    #[test]
    fn affine_rescaling_of_samples_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(15, 6, |_, _| rng.gen::<f64>());
        let y: Vec<usize> = (0..15).map(|i| i % 3).collect();
        let scaled = x.map(|v| 4.0 * v + 2.0);
        assert_eq!(parc(&x, &y, 3).unwrap(), parc(&scaled, &y, 3).unwrap());
    }

    #[test]
    fn constant_row_falls_back_to_unit_distance() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0]);
        let v = parc(&x, &[0, 1, 0, 1], 2).unwrap();
        assert!(v.is_finite());
    }
}
