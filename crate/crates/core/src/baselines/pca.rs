//! Principal component analysis by eigendecomposition of the sample covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::BaselineError;

/// Principal axes of `x` (rows are samples).
///
/// Returns eigenvalues in descending order and the matching unit axes as the
/// columns of a `D x D` matrix. Each axis is signed so that its largest-magnitude
/// loading is positive (first such index on ties).
pub fn principal_axes(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DVector<f64>) {
    let n = x.nrows().max(1) as f64;
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = (centered.transpose() * &centered) / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let dim = x.ncols();
    let mut axes = DMatrix::zeros(dim, dim);
    let mut values = Vec::with_capacity(dim);
    for (k, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let mut pivot = 0;
        for j in 1..dim {
            if col[j].abs() > col[pivot].abs() {
                pivot = j;
            }
        }
        if col[pivot] < 0.0 {
            col = -col;
        }
        axes.set_column(k, &col);
        values.push(eig.eigenvalues[src]);
    }
    (values, axes, mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `d x D`; row k is the k-th principal axis.
    pub basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub explained_fraction: f64,
}

impl Pca {
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        centered * self.basis.transpose()
    }

    pub fn inverse_transform(&self, projected: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = projected * &self.basis;
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

/// Keeps the fewest leading components whose eigenvalues cover at least
/// `variance_keep` of the total variance. Only positive-eigenvalue directions
/// are eligible.
pub fn pca(x: &DMatrix<f64>, variance_keep: f64) -> Result<(Pca, DMatrix<f64>), BaselineError> {
    if !(variance_keep > 0.0 && variance_keep <= 1.0) {
        return Err(BaselineError::InvalidParameter(format!(
            "variance_keep must lie in (0, 1], got {variance_keep}"
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(BaselineError::TooFewSamples {
            needed: 1,
            found: x.nrows(),
        });
    }
    let (values, axes, mean) = principal_axes(x);
    let top = values.first().copied().unwrap_or(0.0);
    let cutoff = top * 1e-12 * x.ncols() as f64;
    let positive: Vec<f64> = values
        .iter()
        .copied()
        .take_while(|&v| v > cutoff && v > 0.0)
        .collect();
    if positive.is_empty() {
        return Err(BaselineError::RankDeficiency(
            "covariance has no positive eigenvalue".into(),
        ));
    }
    let total: f64 = positive.iter().sum();
    let mut kept = 0;
    let mut acc = 0.0;
    for v in &positive {
        acc += v;
        kept += 1;
        if acc / total >= variance_keep - 1e-12 {
            break;
        }
    }
    let basis = axes.columns(0, kept).transpose();
    let model = Pca {
        mean,
        basis,
        eigenvalues: positive[..kept].to_vec(),
        explained_fraction: acc / total,
    };
    let projected = model.transform(x);
    Ok((model, projected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_fn(12, 4, |i, j| {
            ((i * 7 + j * 3) % 11) as f64 + 0.1 * (i * j) as f64
        })
    }

    #[test]
    fn full_variance_reconstructs() {
        let x = sample();
        let (model, projected) = pca(&x, 1.0).unwrap();
        assert_eq!(model.basis.nrows(), 4);
        let back = model.inverse_transform(&projected);
        assert!((back - &x).abs().max() < 1e-9);
    }

    #[test]
    fn components_are_descending_and_sign_fixed() {
        let (model, _) = pca(&sample(), 1.0).unwrap();
        assert!(model.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for row in model.basis.row_iter() {
            let pivot = row
                .iter()
                .copied()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn rank_deficient_input_keeps_positive_directions_only() {
        let x = DMatrix::from_fn(6, 3, |i, j| if j == 2 { 2.0 * i as f64 } else { i as f64 });
        let (model, _) = pca(&x, 1.0).unwrap();
        assert_eq!(model.basis.nrows(), 1);
        let constant = DMatrix::from_element(5, 3, 1.5);
        assert!(matches!(
            pca(&constant, 0.8),
            Err(BaselineError::RankDeficiency(_))
        ));
    }

    #[test]
    fn partial_variance_keeps_fewer_components() {
        let x = DMatrix::from_fn(20, 3, |i, j| match j {
            0 => 10.0 * i as f64,
            1 => (i % 3) as f64,
            _ => 0.01 * ((i * 5) % 7) as f64,
        });
        let (model, projected) = pca(&x, 0.8).unwrap();
        assert_eq!(model.basis.nrows(), 1);
        assert_eq!(projected.ncols(), 1);
        assert!(model.explained_fraction >= 0.8);
    }
}
