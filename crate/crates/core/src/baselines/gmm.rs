//! Full-covariance Gaussian mixture fitted by expectation maximization.
//!
//! Covariances carry a ridge so they stay positive definite. The ridge enters as
//! the prior term `-(beta / 2) * sum_k tr(Sigma_k^-1)` with `beta = eps * n / K`
//! and `eps = 1e-6 * tr(cov(X)) / d`, whose M-step is
//! `Sigma_k = S_k + (beta / N_k) I` (exactly `S_k + eps I` for balanced
//! components). The recorded trace is this penalized log-likelihood, which EM
//! never decreases.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BaselineError;

const COLLAPSE_WEIGHT: f64 = 1e-8;
const MAX_RESTARTS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl GmmConfig {
    pub fn new(components: usize, seed: u64) -> Self {
        Self {
            components,
            max_iters: 200,
            tol: 1e-6,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub log_likelihood_trace: Vec<f64>,
    pub prior_strength: f64,
    pub restarts: u64,
}

struct Factored {
    chol: Vec<Cholesky<f64, Dyn>>,
    log_dets: Vec<f64>,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn factor(&self) -> Result<Factored, BaselineError> {
        let mut chol = Vec::with_capacity(self.components());
        let mut log_dets = Vec::with_capacity(self.components());
        for cov in &self.covariances {
            let c = Cholesky::new(cov.clone()).ok_or_else(|| {
                BaselineError::NumericalFailure("covariance lost positive definiteness".into())
            })?;
            log_dets.push(2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>());
            chol.push(c);
        }
        Ok(Factored { chol, log_dets })
    }

    /// `log(pi_k) + log N(x_i | mu_k, Sigma_k)` for every sample and component.
    fn weighted_log_densities(&self, x: &DMatrix<f64>, f: &Factored) -> DMatrix<f64> {
        let (n, d) = x.shape();
        let k = self.components();
        let log_2pi = (2.0 * std::f64::consts::PI).ln();
        let mut out = DMatrix::zeros(n, k);
        for c in 0..k {
            let log_w = self.weights[c].ln();
            for i in 0..n {
                let diff = x.row(i).transpose() - &self.means[c];
                let z = f.chol[c]
                    .l_dirty()
                    .solve_lower_triangular(&diff)
                    .expect("triangular solve");
                let maha = z.norm_squared();
                out[(i, c)] = log_w - 0.5 * (d as f64 * log_2pi + f.log_dets[c] + maha);
            }
        }
        out
    }

    fn e_step(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), BaselineError> {
        let f = self.factor()?;
        let mut resp = self.weighted_log_densities(x, &f);
        let mut ll = 0.0;
        for mut row in resp.row_iter_mut() {
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            ll += lse;
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            let s: f64 = row.sum();
            row /= s;
        }
        let mut penalty = 0.0;
        for c in &f.chol {
            penalty += c.inverse().trace();
        }
        Ok((resp, ll - 0.5 * self.prior_strength * penalty))
    }

    /// Posterior component probabilities; rows sum to 1.
    pub fn responsibilities(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, BaselineError> {
        Ok(self.e_step(x)?.0)
    }
}

fn m_step(
    x: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    prior_strength: f64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>), BaselineError> {
    let (n, d) = x.shape();
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let col = resp.column(c);
        let nk: f64 = col.sum();
        if nk / (n as f64) < COLLAPSE_WEIGHT {
            return Err(BaselineError::EmCollapse { restarts: 0 });
        }
        let mean = x.transpose() * col / nk;
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let diff = x.row(i).transpose() - &mean;
            cov.ger(col[i], &diff, &diff, 1.0);
        }
        cov /= nk;
        for j in 0..d {
            cov[(j, j)] += prior_strength / nk;
        }
        weights.push(nk / n as f64);
        means.push(mean);
        covs.push(cov);
    }
    Ok((weights, means, covs))
}

/// k-means++ seeding followed by a hard assignment to the nearest seed.
fn initial_responsibilities(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let dist2 = |i: usize, j: usize| (x.row(i) - x.row(j)).norm_squared();
    let mut centers = vec![rng.gen_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(i, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(next);
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(dist2(i, next));
        }
    }
    let mut resp = DMatrix::zeros(n, k);
    for i in 0..n {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, &ci) in centers.iter().enumerate() {
            let dd = dist2(i, ci);
            if dd < best_d {
                best_d = dd;
                best = c;
            }
        }
        resp[(i, best)] = 1.0;
    }
    resp
}

fn fit_once(
    x: &DMatrix<f64>,
    cfg: &GmmConfig,
    seed: u64,
    prior_strength: f64,
) -> Result<GmmModel, BaselineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let resp = initial_responsibilities(x, cfg.components, &mut rng);
    let (weights, means, covariances) = m_step(x, &resp, prior_strength)?;
    let mut model = GmmModel {
        weights,
        means,
        covariances,
        log_likelihood_trace: Vec::new(),
        prior_strength,
        restarts: 0,
    };
    let (mut resp, mut ll) = model.e_step(x)?;
    model.log_likelihood_trace.push(ll);
    for _ in 0..cfg.max_iters {
        let (weights, means, covariances) = m_step(x, &resp, prior_strength)?;
        let candidate = GmmModel {
            weights,
            means,
            covariances,
            log_likelihood_trace: Vec::new(),
            prior_strength,
            restarts: 0,
        };
        let (next_resp, next_ll) = candidate.e_step(x)?;
        if !next_ll.is_finite() {
            return Err(BaselineError::NumericalFailure(
                "non-finite EM objective".into(),
            ));
        }
        if next_ll < ll {
            // round-off at convergence; keep the previous iterate
            break;
        }
        let gain = next_ll - ll;
        let trace = std::mem::take(&mut model.log_likelihood_trace);
        model = candidate;
        model.log_likelihood_trace = trace;
        model.log_likelihood_trace.push(next_ll);
        resp = next_resp;
        ll = next_ll;
        if gain < cfg.tol {
            break;
        }
    }
    Ok(model)
}

pub fn fit_gmm(x: &DMatrix<f64>, cfg: &GmmConfig) -> Result<GmmModel, BaselineError> {
    let (n, d) = x.shape();
    if cfg.components == 0 || n <= cfg.components {
        return Err(BaselineError::TooFewSamples {
            needed: cfg.components + 1,
            found: n,
        });
    }
    if d == 0 {
        return Err(BaselineError::InvalidParameter(
            "zero-dimensional data".into(),
        ));
    }
    let (values, _, _) = super::pca::principal_axes(x);
    let total_var: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let eps = (1e-6 * total_var / d as f64).max(1e-12);
    let prior_strength = eps * n as f64 / cfg.components as f64;
    for restart in 0..=MAX_RESTARTS {
        match fit_once(x, cfg, cfg.seed.wrapping_add(restart), prior_strength) {
            Ok(mut m) => {
                m.restarts = restart;
                return Ok(m);
            }
            Err(BaselineError::EmCollapse { .. }) => {
                log::warn!(
                    "EM component collapsed, restarting (attempt {})",
                    restart + 1
                );
            }
            Err(e) => return Err(e),
        }
    }
    Err(BaselineError::EmCollapse {
        restarts: MAX_RESTARTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, sd: f64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        for c in centers {
            for _ in 0..per {
                for v in c {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(v + sd * z);
                }
            }
        }
        DMatrix::from_row_slice(centers.len() * per, 2, &data)
    }

    fn assert_monotone(trace: &[f64]) {
        assert!(
            trace.windows(2).all(|w| w[1] >= w[0]),
            "trace not monotone: {trace:?}"
        );
    }

    #[test]
    fn recovers_separated_blob_means() {
        let x = blobs(3, &[[0.0, 0.0], [6.0, 6.0]], 60, 0.5);
        let m = fit_gmm(&x, &GmmConfig::new(2, 11)).unwrap();
        assert_monotone(&m.log_likelihood_trace);
        let mut means: Vec<[f64; 2]> = m.means.iter().map(|v| [v[0], v[1]]).collect();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (got, want) in means.iter().zip([[0.0, 0.0], [6.0, 6.0]]) {
            assert!(
                (got[0] - want[0]).abs() < 0.1 && (got[1] - want[1]).abs() < 0.1,
                "{got:?}"
            );
        }
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn responsibilities_are_normalized_and_traces_monotone() {
        for seed in 0..10 {
            let x = blobs(seed, &[[0.0, 0.0], [1.0, 2.0], [3.0, 0.5]], 15, 0.8);
            let m = fit_gmm(&x, &GmmConfig::new(3, seed)).unwrap();
            assert_monotone(&m.log_likelihood_trace);
            let r = m.responsibilities(&x).unwrap();
            for row in r.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_component_is_all_ones() {
        let x = blobs(1, &[[0.0, 0.0]], 10, 1.0);
        let m = fit_gmm(&x, &GmmConfig::new(1, 0)).unwrap();
        let r = m.responsibilities(&x).unwrap();
        assert!(r.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn too_few_samples() {
        let x = blobs(1, &[[0.0, 0.0]], 2, 1.0);
        assert!(matches!(
            fit_gmm(&x, &GmmConfig::new(2, 0)),
            Err(BaselineError::TooFewSamples { .. })
        ));
    }
}
