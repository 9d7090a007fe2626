//! Minibatch SGD with momentum on cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::{backward_from_logit_grads, cross_entropy, forward, Images, MicroNet};
use crate::MicronetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: MicroNet,
    /// Full-set loss before the first update.
    pub initial_loss: f64,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn dataset_loss(
    net: &MicroNet,
    images: &Images,
    labels: &[usize],
) -> Result<f64, MicronetError> {
    let f = forward(net, images);
    let logits = f
        .logits
        .ok_or_else(|| MicronetError::InvalidSpec("network has no head".into()))?;
    Ok(cross_entropy(&logits, labels)?.0)
}

pub fn train(
    net: &MicroNet,
    images: &Images,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Trained, MicronetError> {
    train_with(net, images, labels, cfg, |_, _| {})
}

/// Like [`train`], calling `on_epoch(epoch, net)` after each epoch (1-based).
pub fn train_with(
    net: &MicroNet,
    images: &Images,
    labels: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &MicroNet),
) -> Result<Trained, MicronetError> {
    let z = net
        .head_classes()
        .ok_or_else(|| MicronetError::InvalidSpec("training needs a head".into()))?;
    if images.len() != labels.len() || images.is_empty() {
        return Err(MicronetError::ShapeMismatch(format!(
            "{} images, {} labels",
            images.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= z) {
        return Err(MicronetError::ShapeMismatch(format!(
            "label {bad} for a {z}-way head"
        )));
    }
    if cfg.batch_size == 0
        || !(cfg.lr.is_finite() && cfg.lr >= 0.0)
        || !(0.0..1.0).contains(&cfg.momentum)
    {
        return Err(MicronetError::InvalidSpec(format!(
            "bad training config {cfg:?}"
        )));
    }
    let mut net = net.clone();
    let initial_loss = dataset_loss(&net, images, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut velocity = vec![0.0; net.params().len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let imgs = images.select(batch);
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let f = forward(&net, &imgs);
            let (loss, dlogits) = cross_entropy(f.logits.as_ref().expect("head checked"), &ys)?;
            if !loss.is_finite() {
                return Err(MicronetError::Divergence { epoch, lr: cfg.lr });
            }
            sum += loss * batch.len() as f64;
            let g = backward_from_logit_grads(&net, &f.cache, &dlogits)?;
            for ((p, v), gi) in net
                .params_mut()
                .iter_mut()
                .zip(&mut velocity)
                .zip(g.values())
            {
                *v = cfg.momentum * *v - cfg.lr * gi;
                *p += *v;
            }
        }
        if !net.is_finite() {
            return Err(MicronetError::Divergence { epoch, lr: cfg.lr });
        }
        epoch_losses.push(sum / images.len() as f64);
        on_epoch(epoch, &net);
    }
    Ok(Trained {
        net,
        initial_loss,
        epoch_losses,
    })
}

pub fn accuracy(net: &MicroNet, images: &Images, labels: &[usize]) -> Result<f64, MicronetError> {
    let f = forward(net, images);
    let logits = f
        .logits
        .ok_or_else(|| MicronetError::InvalidSpec("network has no head".into()))?;
    let hits = logits
        .row_iter()
        .zip(labels)
        .filter(|(row, &y)| row.iter().enumerate().all(|(k, &v)| k == y || v < row[y]))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
