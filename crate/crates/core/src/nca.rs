//! Neighborhood component analysis.
//!
//! Learns a linear map `A` (`d x D`) that maximizes the expected number of
//! samples whose stochastic nearest neighbor shares their label:
//!
//! ```text
//! p_ij = exp(-|A x_i - A x_j|^2) / sum_{k != i} exp(-|A x_i - A x_k|^2),  p_ii = 0
//! f(A) = sum_i sum_{j in C_i} p_ij - lambda |A|_F^2
//! ```
//!
//! with gradient `2 A sum_i (p_i sum_k p_ik x_ik x_ik^T - sum_{j in C_i} p_ij x_ij x_ij^T) - 2 lambda A`,
//! `x_ij = x_i - x_j` and `p_i = sum_{j in C_i} p_ij`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::pca::principal_axes;

#[derive(Debug, Error, PartialEq)]
pub enum NcaError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NcaConfig {
    /// Projection rows; `None` means `min(D, max(2C, 32))`.
    pub out_dim: Option<usize>,
    pub max_iters: usize,
    pub step_size: f64,
    /// Frobenius penalty weight; `None` means `1e-3 * n / D`.
    pub l2_penalty: Option<f64>,
    pub tol: f64,
    pub seed: u64,
}

impl Default for NcaConfig {
    fn default() -> Self {
        Self {
            out_dim: None,
            max_iters: 200,
            step_size: 0.1,
            l2_penalty: None,
            tol: 1e-5,
            seed: 0,
        }
    }
}

impl NcaConfig {
    pub fn resolved_out_dim(&self, dim: usize, classes: usize) -> usize {
        self.out_dim
            .unwrap_or_else(|| dim.min((2 * classes).max(32)))
    }

    pub fn resolved_penalty(&self, n: usize, dim: usize) -> f64 {
        self.l2_penalty.unwrap_or(1e-3 * n as f64 / dim as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcaModel {
    /// `d x D`.
    pub projection: DMatrix<f64>,
    /// Objective at initialization followed by every accepted step.
    pub objective_trace: Vec<f64>,
    pub l2_penalty: f64,
}

impl NcaModel {
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NcaError> {
        project(&self.projection, x)
    }
}

/// Rows of the result are `A x_i`.
pub fn project(a: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NcaError> {
    if a.ncols() != x.ncols() {
        return Err(NcaError::ShapeMismatch(format!(
            "projection has {} columns, data has {}",
            a.ncols(),
            x.ncols()
        )));
    }
    Ok(x * a.transpose())
}

fn check_shapes(a: &DMatrix<f64>, x: &DMatrix<f64>, labels: &[usize]) -> Result<(), NcaError> {
    if a.ncols() != x.ncols() {
        return Err(NcaError::ShapeMismatch(format!(
            "A is {}x{}, X has {} columns",
            a.nrows(),
            a.ncols(),
            x.ncols()
        )));
    }
    if labels.len() != x.nrows() {
        return Err(NcaError::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            x.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(NcaError::ShapeMismatch("need at least 2 samples".into()));
    }
    Ok(())
}

/// Stochastic neighbor probabilities in the projected space; zero diagonal,
/// rows computed with max-subtraction.
pub fn neighbor_probabilities(projected: &DMatrix<f64>) -> DMatrix<f64> {
    let n = projected.nrows();
    let mut p = DMatrix::zeros(n, n);
    let mut dist = vec![0.0; n];
    for i in 0..n {
        let yi = projected.row(i);
        let mut closest = f64::INFINITY;
        for k in 0..n {
            if k != i {
                let d = (yi - projected.row(k)).norm_squared();
                dist[k] = d;
                closest = closest.min(d);
            }
        }
        let mut z = 0.0;
        for k in 0..n {
            if k != i {
                let e = (closest - dist[k]).exp();
                p[(i, k)] = e;
                z += e;
            }
        }
        for k in 0..n {
            p[(i, k)] /= z;
        }
    }
    p
}

fn same_class_mass(p: &DMatrix<f64>, labels: &[usize]) -> Vec<f64> {
    let n = labels.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && labels[j] == labels[i])
                .map(|j| p[(i, j)])
                .sum()
        })
        .collect()
}

pub fn nca_objective(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    labels: &[usize],
    l2_penalty: f64,
) -> Result<f64, NcaError> {
    check_shapes(a, x, labels)?;
    let p = neighbor_probabilities(&project(a, x)?);
    let mass: f64 = same_class_mass(&p, labels).iter().sum();
    Ok(mass - l2_penalty * a.norm_squared())
}

/// Objective and gradient from one pass over the neighbor probabilities.
pub fn nca_objective_and_gradient(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    labels: &[usize],
    l2_penalty: f64,
) -> Result<(f64, DMatrix<f64>), NcaError> {
    check_shapes(a, x, labels)?;
    let n = x.nrows();
    let y = project(a, x)?;
    let p = neighbor_probabilities(&y);
    let mass = same_class_mass(&p, labels);

    // sum_ik w_ik (y_i - y_k)(x_i - x_k)^T = Y^T L X with L = diag(r) + diag(c) - W - W^T
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let same = k != i && labels[k] == labels[i];
            w[(i, k)] = mass[i] * p[(i, k)] - if same { p[(i, k)] } else { 0.0 };
        }
    }
    let mut lap = -(&w + w.transpose());
    for i in 0..n {
        lap[(i, i)] += w.row(i).sum() + w.column(i).sum();
    }
    let grad = (y.transpose() * lap * x) * 2.0 - a * (2.0 * l2_penalty);
    let objective = mass.iter().sum::<f64>() - l2_penalty * a.norm_squared();
    Ok((objective, grad))
}

pub fn nca_gradient(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    labels: &[usize],
    l2_penalty: f64,
) -> Result<DMatrix<f64>, NcaError> {
    nca_objective_and_gradient(a, x, labels, l2_penalty).map(|(_, g)| g)
}

/// Leading `d` principal axes, scaled so the mean pairwise distance of the
/// projected samples is `sqrt(d)`.
pub fn initial_projection(x: &DMatrix<f64>, out_dim: usize) -> Result<DMatrix<f64>, NcaError> {
    let (_, axes, _) = principal_axes(x);
    let mut a = axes.columns(0, out_dim).transpose();
    let projected = x * a.transpose();
    let n = x.nrows();
    let mut total = 0.0;
    for i in 1..n {
        for j in 0..i {
            total += (projected.row(i) - projected.row(j)).norm();
        }
    }
    let mean = total / (n * (n - 1) / 2) as f64;
    if !(mean > 0.0) {
        return Err(NcaError::DegenerateInput(
            "projected samples coincide; no spread to scale".into(),
        ));
    }
    a *= (out_dim as f64).sqrt() / mean;
    Ok(a)
}

const MAX_HALVINGS: usize = 60;

/// Gradient ascent with backtracking: a step is taken only if it raises the
/// objective, the step halves on each rejection and doubles (up to
/// `step_size`) after each acceptance.
pub fn fit_nca(x: &DMatrix<f64>, labels: &[usize], cfg: &NcaConfig) -> Result<NcaModel, NcaError> {
    let (n, dim) = x.shape();
    if labels.len() != n {
        return Err(NcaError::ShapeMismatch(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if n < 2 || dim == 0 {
        return Err(NcaError::ShapeMismatch(format!(
            "need n >= 2 and D >= 1, got {n}x{dim}"
        )));
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(NcaError::NonFinite(format!("embedding element {pos}")));
    }
    if !(cfg.tol > 0.0) || !(cfg.step_size > 0.0) {
        return Err(NcaError::InvalidConfig(
            "tol and step_size must be positive".into(),
        ));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(NcaError::DegenerateInput(
            "all samples share one label".into(),
        ));
    }
    if x.row_iter().all(|r| r == x.row(0)) {
        return Err(NcaError::DegenerateInput(
            "all samples are identical".into(),
        ));
    }
    let classes = labels.iter().copied().max().unwrap() + 1;
    let out_dim = cfg.resolved_out_dim(dim, classes);
    if out_dim == 0 || out_dim > dim {
        return Err(NcaError::InvalidConfig(format!(
            "out_dim {out_dim} must lie in 1..={dim}"
        )));
    }
    let penalty = cfg.resolved_penalty(n, dim);
    if !(penalty >= 0.0) {
        return Err(NcaError::InvalidConfig(
            "l2_penalty must be non-negative".into(),
        ));
    }

    let mut a = initial_projection(x, out_dim)?;
    let (mut f, mut g) = nca_objective_and_gradient(&a, x, labels, penalty)?;
    if !f.is_finite() {
        return Err(NcaError::NonFinite("objective at initialization".into()));
    }
    let mut trace = vec![f];
    let mut step = cfg.step_size;
    for _ in 0..cfg.max_iters {
        if g.norm_squared() == 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &a + &g * step;
            let (fc, gc) = nca_objective_and_gradient(&candidate, x, labels, penalty)?;
            if fc.is_finite() && fc > f {
                accepted = Some((candidate, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, fc, gc)) = accepted else {
            break;
        };
        let rel = (fc - f) / f.abs().max(1e-12);
        a = candidate;
        f = fc;
        g = gc;
        trace.push(f);
        step = (step * 2.0).min(cfg.step_size);
        if rel < cfg.tol {
            break;
        }
    }
    Ok(NcaModel {
        projection: a,
        objective_trace: trace,
        l2_penalty: penalty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    /// Direct double loop over pairs, no shared code with the implementation.
    fn objective_oracle(a: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize], lambda: f64) -> f64 {
        let n = x.nrows();
        let mut total = 0.0;
        for i in 0..n {
            let ai = a * x.row(i).transpose();
            let mut denom = 0.0;
            let mut numer = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e = (-(&ai - a * x.row(j).transpose()).norm_squared()).exp();
                denom += e;
                if y[j] == y[i] {
                    numer += e;
                }
            }
            total += numer / denom;
        }
        total - lambda * a.norm_squared()
    }

    fn central_difference(
        a: &DMatrix<f64>,
        x: &DMatrix<f64>,
        y: &[usize],
        lambda: f64,
    ) -> DMatrix<f64> {
        let h = 1e-5;
        DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| {
            let mut plus = a.clone();
            plus[(r, c)] += h;
            let mut minus = a.clone();
            minus[(r, c)] -= h;
            (nca_objective(&plus, x, y, lambda).unwrap()
                - nca_objective(&minus, x, y, lambda).unwrap())
                / (2.0 * h)
        })
    }

    #[test]
    fn no_same_class_neighbor_leaves_only_penalty() {
        let a = DMatrix::from_row_slice(1, 2, &[0.3, -0.7]);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let f = nca_objective(&a, &x, &[0, 1], 0.5).unwrap();
        assert_eq!(f, -0.5 * a.norm_squared());
    }

    #[test]
    fn saturated_clusters_reach_n() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.01, 0.0, 50.0, 50.0, 50.0, 50.01]);
        let f = nca_objective(&DMatrix::identity(2, 2), &x, &[0, 0, 1, 1], 0.0).unwrap();
        assert!(f >= 4.0 * (1.0 - 1e-6));
    }

    #[test]
    fn objective_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let x = random(&mut rng, 6, 3);
            let a = random(&mut rng, 2, 3);
            let y = [0, 1, 0, 1, 1, 2];
            let got = nca_objective(&a, &x, &y, 0.1).unwrap();
            assert!((got - objective_oracle(&a, &x, &y, 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random(&mut rng, 5, 3);
        let a = random(&mut rng, 2, 3);
        let y = [0, 0, 1, 1, 0];
        let g = nca_gradient(&a, &x, &y, 0.05).unwrap();
        let fd = central_difference(&a, &x, &y, 0.05);
        let rel = (&g - &fd).norm() / g.norm().max(fd.norm());
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn zero_data_gradient_is_penalty_only() {
        let a = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
        let x = DMatrix::zeros(4, 3);
        let g = nca_gradient(&a, &x, &[0, 1, 0, 1], 0.25).unwrap();
        assert_eq!(g, &a * -0.5);
    }

    #[test]
    fn duplicate_points_keep_gradient_finite() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 1.0, -1.0, 2.0, -1.0, 2.0]);
        let a = DMatrix::identity(2, 2);
        let g = nca_gradient(&a, &x, &[0, 0, 1, 1], 0.0).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random(&mut rng, 9, 2) * 4.0;
        let p = neighbor_probabilities(&y);
        for i in 0..9 {
            assert_eq!(p[(i, i)], 0.0);
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 8, 4);
        let a = random(&mut rng, 2, 4);
        let y = [0, 1, 2, 0, 1, 2, 0, 1];
        let shift = nalgebra::RowDVector::from_vec(vec![3.0, -2.0, 0.5, 7.0]);
        let mut moved = x.clone();
        for mut row in moved.row_iter_mut() {
            row += &shift;
        }
        let f0 = nca_objective(&a, &x, &y, 0.01).unwrap();
        let f1 = nca_objective(&a, &moved, &y, 0.01).unwrap();
        assert!((f0 - f1).abs() < 1e-9);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = DMatrix::from_fn(5, 2, |i, j| (i + j) as f64);
        assert!(matches!(
            fit_nca(&x, &[1; 5], &NcaConfig::default()),
            Err(NcaError::DegenerateInput(_))
        ));
        let same = DMatrix::from_element(4, 2, 3.0);
        assert!(matches!(
            fit_nca(&same, &[0, 1, 0, 1], &NcaConfig::default()),
            Err(NcaError::DegenerateInput(_))
        ));
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 10, 4);
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let cfg = NcaConfig {
            max_iters: 0,
            ..Default::default()
        };
        let model = fit_nca(&x, &y, &cfg).unwrap();
        assert_eq!(model.objective_trace.len(), 1);
        assert_eq!(model.projection, initial_projection(&x, 4).unwrap());
    }

    #[test]
    fn fit_improves_blob_separability_and_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (n_per, dim) = (15, 16);
        let centers = random(&mut rng, 3, dim) * 1.5;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for c in 0..3 {
            for _ in 0..n_per {
                for j in 0..dim {
                    rows.push(centers[(c, j)] + rng.gen::<f64>() * 2.0 - 1.0);
                }
                y.push(c);
            }
        }
        let x = DMatrix::from_row_slice(3 * n_per, dim, &rows);
        let cfg = NcaConfig {
            out_dim: Some(4),
            ..Default::default()
        };
        let model = fit_nca(&x, &y, &cfg).unwrap();
        let trace = &model.objective_trace;
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        let before = nca_objective(&initial_projection(&x, 4).unwrap(), &x, &y, 0.0).unwrap();
        let after = nca_objective(&model.projection, &x, &y, 0.0).unwrap();
        assert!(
            after / y.len() as f64 >= before / y.len() as f64,
            "{after} < {before}"
        );
    }

    #[test]
    fn project_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 5, 3);
        assert_eq!(project(&DMatrix::identity(3, 3), &x).unwrap(), x);
        assert!(project(&DMatrix::zeros(2, 3), &x)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let a = random(&mut rng, 2, 3);
        let p = project(&a, &x).unwrap();
        for i in 0..5 {
            let want = &a * x.row(i).transpose();
            for r in 0..2 {
                assert!((p[(i, r)] - want[r]).abs() < 1e-12);
            }
        }
        assert!(matches!(
            project(&a, &random(&mut rng, 5, 2)),
            Err(NcaError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, 20, 5);
        let y: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let a = fit_nca(&x, &y, &NcaConfig::default()).unwrap();
        let b = fit_nca(&x, &y, &NcaConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
