//! Log maximum evidence of a Bayesian linear head on fixed features.

use nalgebra::{DMatrix, DVector, SVD};

use super::{check_labels, BaselineError};

const MAX_ITERS: usize = 100;
const REL_TOL: f64 = 1e-6;
const CLAMP: (f64, f64) = (1e-12, 1e12);

/// Fixed-point result for one regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceFit {
    pub alpha: f64,
    pub beta: f64,
    /// Log evidence (not divided by n).
    pub evidence: f64,
    /// Evidence after each fixed-point update, starting from `alpha = beta = 1`.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// SVD of the feature matrix reduced to its numerical rank.
#[derive(Debug, Clone)]
pub struct SpectralFeatures {
    u: DMatrix<f64>,
    /// Squared singular values `sigma_j^2`, rank entries.
    s2: Vec<f64>,
    n: usize,
}

impl SpectralFeatures {
    pub fn new(f: &DMatrix<f64>) -> Result<Self, BaselineError> {
        let (n, d) = f.shape();
        if n < 2 || d == 0 {
            return Err(BaselineError::TooFewSamples {
                needed: 2,
                found: n,
            });
        }
        let svd = SVD::try_new(f.clone(), true, false, f64::EPSILON, 10_000)
            .ok_or(BaselineError::SvdFailure)?;
        let u = svd.u.ok_or(BaselineError::SvdFailure)?;
        let top = svd.singular_values.max();
        let cutoff = top * n.max(d) as f64 * f64::EPSILON;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&j| svd.singular_values[j] > cutoff)
            .collect();
        let u = u.select_columns(&keep);
        let s2 = keep
            .iter()
            .map(|&j| svd.singular_values[j].powi(2))
            .collect();
        Ok(Self { u, s2, n })
    }

    pub fn rank(&self) -> usize {
        self.s2.len()
    }

    /// Fixed-point evidence maximization for regression target `y`.
    pub fn fit(&self, y: &DVector<f64>) -> EvidenceFit {
        let proj = self.u.transpose() * y;
        let x2: Vec<f64> = proj.iter().map(|v| v * v).collect();
        let y_perp2 = (y.norm_squared() - x2.iter().sum::<f64>()).max(0.0);
        let n = self.n as f64;

        let (mut alpha, mut beta) = (1.0f64, 1.0f64);
        let mut trace = vec![self.evidence(alpha, beta, &x2, y_perp2)];
        let mut iterations = 0;
        for _ in 0..MAX_ITERS {
            iterations += 1;
            let (gamma, m2, res2) = self.moments(alpha, beta, &x2, y_perp2);
            let next_alpha = (gamma / m2.max(f64::MIN_POSITIVE)).clamp(CLAMP.0, CLAMP.1);
            let next_beta = ((n - gamma) / res2.max(f64::MIN_POSITIVE)).clamp(CLAMP.0, CLAMP.1);
            let da = (next_alpha - alpha).abs() / alpha;
            let db = (next_beta - beta).abs() / beta;
            alpha = next_alpha;
            beta = next_beta;
            trace.push(self.evidence(alpha, beta, &x2, y_perp2));
            if da < REL_TOL && db < REL_TOL {
                break;
            }
        }
        EvidenceFit {
            alpha,
            beta,
            evidence: *trace.last().unwrap(),
            trace,
            iterations,
        }
    }

    /// `(gamma, m^T m, ||F m - y||^2)` at the posterior mean for `(alpha, beta)`.
    fn moments(&self, alpha: f64, beta: f64, x2: &[f64], y_perp2: f64) -> (f64, f64, f64) {
        let mut gamma = 0.0;
        let mut m2 = 0.0;
        let mut res2 = y_perp2;
        for (&s, &x) in self.s2.iter().zip(x2) {
            let denom = alpha + beta * s;
            gamma += beta * s / denom;
            m2 += beta * beta * s * x / (denom * denom);
            res2 += alpha * alpha * x / (denom * denom);
        }
        (gamma, m2, res2)
    }

    /// Log marginal likelihood of `y` under `w ~ N(0, I / alpha)`, noise precision `beta`.
    ///
    /// Directions outside the column space of `F` contribute `alpha / alpha`
    /// to the determinant and cancel, so only the rank enters.
    pub fn evidence(&self, alpha: f64, beta: f64, x2: &[f64], y_perp2: f64) -> f64 {
        let n = self.n as f64;
        let r = self.rank() as f64;
        let (_, m2, res2) = self.moments(alpha, beta, x2, y_perp2);
        let log_det: f64 = self.s2.iter().map(|s| (alpha + beta * s).ln()).sum();
        0.5 * r * alpha.ln() + 0.5 * n * beta.ln()
            - 0.5 * beta * res2
            - 0.5 * alpha * m2
            - 0.5 * log_det
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Mean over classes of the per-sample maximum log evidence of a one-vs-rest
/// Bayesian linear regression on the features.
pub fn logme(
    features: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
) -> Result<f64, BaselineError> {
    check_labels(labels, features.nrows(), classes)?;
    let spectral = SpectralFeatures::new(features)?;
    let n = features.nrows();
    let mut total = 0.0;
    for c in 0..classes {
        let y = DVector::from_fn(n, |i, _| if labels[i] == c { 1.0 } else { 0.0 });
        total += spectral.fit(&y).evidence / n as f64;
    }
    Ok(total / classes as f64)
}
