use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tfr_core::baselines::{fit_gmm, leep, GmmConfig};
use tfr_core::data::{CandidateBundle, TargetSet};
use tfr_core::nca::{nca_objective, nca_objective_and_gradient, NcaConfig};
use tfr_core::transfer::{
    s_lp, sample_triplets, triplet_loss_and_embedding_grads, KnnConfig, Reduction, TripletConfig,
};

/// LEEP from an explicit joint table P(y, z) = sum_i [y_i = y] theta_iz / n.
fn leep_brute(theta: &DMatrix<f64>, labels: &[usize], classes: usize) -> f64 {
    let (n, z) = theta.shape();
    let mut joint = vec![vec![0.0; z]; classes];
    for i in 0..n {
        for k in 0..z {
            joint[labels[i]][k] += theta[(i, k)] / n as f64;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut eep = 0.0;
        for k in 0..z {
            let marginal: f64 = (0..classes).map(|y| joint[y][k]).sum();
            if marginal > 0.0 {
                eep += joint[labels[i]][k] / marginal * theta[(i, k)];
            }
        }
        total += eep.ln();
    }
    total / n as f64
}

#[test]
fn leep_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(2..15);
        let z = rng.gen_range(1..6);
        let classes = rng.gen_range(1..4);
        let mut theta = DMatrix::from_fn(n, z, |_, _| rng.gen::<f64>() + 1e-3);
        for mut row in theta.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let got = leep(&theta, &labels, classes).unwrap();
        assert!((got - leep_brute(&theta, &labels, classes)).abs() < 1e-12);
        assert!(got <= 0.0);
    }
}

#[test]
fn gmm_traces_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..25 {
        let k = rng.gen_range(1..4);
        let d = rng.gen_range(1..4);
        let n = rng.gen_range(30..80);
        let x = DMatrix::from_fn(n, d, |i, _| {
            let c = (i % k) as f64;
            3.0 * c + rng.sample::<f64, _>(StandardNormal)
        });
        let model = fit_gmm(&x, &GmmConfig::new(k, trial)).unwrap();
        assert!(
            model.log_likelihood_trace.windows(2).all(|p| p[1] >= p[0]),
            "trial {trial}: {:?}",
            model.log_likelihood_trace
        );
    }
}

#[test]
fn nca_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let n = rng.gen_range(6..14);
        let dim = rng.gen_range(2..6);
        let out = rng.gen_range(1..=dim);
        let x = DMatrix::from_fn(n, dim, |_, _| rng.gen::<f64>());
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let a = DMatrix::from_fn(out, dim, |_, _| rng.gen::<f64>() - 0.5);
        let lambda = 0.01;
        let (_, grad) = nca_objective_and_gradient(&a, &x, &labels, lambda).unwrap();
        let h = 1e-6;
        let fd = DMatrix::from_fn(out, dim, |r, c| {
            let mut p = a.clone();
            p[(r, c)] += h;
            let mut m = a.clone();
            m[(r, c)] -= h;
            (nca_objective(&p, &x, &labels, lambda).unwrap()
                - nca_objective(&m, &x, &labels, lambda).unwrap())
                / (2.0 * h)
        });
        let rel = (&grad - &fd).norm() / grad.norm().max(fd.norm()).max(1e-12);
        assert!(rel < 1e-6, "{rel}");
    }
}

#[test]
fn triplet_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let n = rng.gen_range(4..12);
        let dim = rng.gen_range(1..6);
        let x = DMatrix::from_fn(n, dim, |_, _| rng.gen::<f64>());
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let cfg = TripletConfig {
            seed: trial,
            triplets_per_anchor: 2,
            ..Default::default()
        };
        let triplets = sample_triplets(&labels, &cfg).unwrap();
        let margin = 0.3;
        let reduction = if trial % 2 == 0 {
            Reduction::MeanAll
        } else {
            Reduction::MeanNonzero
        };
        let out = triplet_loss_and_embedding_grads(&x, &triplets, margin, reduction).unwrap();
        let loss = |m: &DMatrix<f64>| {
            triplet_loss_and_embedding_grads(m, &triplets, margin, reduction)
                .unwrap()
                .loss
        };
        let h = 1e-7;
        let fd = DMatrix::from_fn(n, dim, |r, c| {
            let mut p = x.clone();
            p[(r, c)] += h;
            let mut m = x.clone();
            m[(r, c)] -= h;
            (loss(&p) - loss(&m)) / (2.0 * h)
        });
        let scale = out.grad.norm().max(fd.norm());
        if scale == 0.0 {
            continue;
        }
        assert!((&out.grad - &fd).norm() / scale < 1e-6, "trial {trial}");
    }
}

#[test]
fn s_lp_under_permuted_labels_is_near_half() {
    let n = 200;
    let mut total = 0.0;
    let seeds = 50;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        labels.shuffle(&mut rng);
        let target = TargetSet::new("t", x.clone(), labels, 2).unwrap();
        let bundle = CandidateBundle {
            model_id: "m".into(),
            source_dataset: "s".into(),
            architecture: "a".into(),
            embeddings: x,
            source_probs: None,
            grad_norms: None,
            provenance: BTreeMap::new(),
        };
        let cfg = NcaConfig {
            seed,
            ..Default::default()
        };
        total += s_lp(&target, &bundle, &cfg, &KnnConfig::default()).unwrap();
    }
    let mean = total / seeds as f64;
    assert!(
        (mean - n as f64 / 2.0).abs() < 0.1 * n as f64 / 2.0,
        "{mean}"
    );
}
