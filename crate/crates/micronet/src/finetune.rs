//! Ground-truth oracle: full fine-tuning of a source net on a target task,
//! model selection on validation loss, macro one-vs-rest test AUC.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::auc::macro_auc_ovr;
use crate::dataset::Splits;
use crate::net::{forward, softmax_rows, MicroNet};
use crate::train::{dataset_loss, train_with, TrainConfig};
use crate::MicronetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperGrid {
    pub lrs: Vec<f64>,
    /// Two epoch budgets; the shorter one is a checkpoint of the longer run.
    pub epochs: [usize; 2],
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            lrs: vec![0.1, 0.01, 0.001],
            epochs: [6, 12],
            batch_size: 16,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneOutcome {
    pub auc: f64,
    pub lr: f64,
    pub epochs: usize,
    pub val_loss: f64,
    /// Learning rates whose run diverged.
    pub diverged: Vec<f64>,
}

pub fn fine_tune_auc(
    source: &MicroNet,
    splits: &Splits,
    grid: &HyperGrid,
    seed: u64,
) -> Result<FineTuneOutcome, MicronetError> {
    let classes = splits.train.num_classes();
    if classes < 2 {
        return Err(MicronetError::InvalidSpec(
            "target needs at least 2 classes".into(),
        ));
    }
    if grid.lrs.is_empty() || grid.epochs.contains(&0) {
        return Err(MicronetError::InvalidSpec(format!(
            "empty hyper grid {grid:?}"
        )));
    }
    let [short, long] = if grid.epochs[0] <= grid.epochs[1] {
        grid.epochs
    } else {
        [grid.epochs[1], grid.epochs[0]]
    };
    let start = source.with_new_head(classes, seed);
    let val = &splits.val;
    // (val loss, lr, epochs, net)
    let mut best: Option<(f64, f64, usize, MicroNet)> = None;
    let mut diverged = Vec::new();
    let mut consider = |loss: f64, lr: f64, epochs: usize, net: &MicroNet| {
        debug!("lr {lr} epochs {epochs}: val loss {loss:.4}");
        if loss.is_finite() && best.as_ref().map_or(true, |b| loss < b.0) {
            best = Some((loss, lr, epochs, net.clone()));
        }
    };
    for &lr in &grid.lrs {
        let cfg = TrainConfig {
            epochs: long,
            lr,
            momentum: grid.momentum,
            batch_size: grid.batch_size,
            seed,
        };
        let mut checkpoint = None;
        let run = train_with(
            &start,
            &splits.train.images,
            &splits.train.labels,
            &cfg,
            |epoch, net| {
                if epoch == short && short < long {
                    checkpoint = Some(net.clone());
                }
            },
        );
        if let Some(net) = &checkpoint {
            consider(dataset_loss(net, &val.images, &val.labels)?, lr, short, net);
        }
        match run {
            Ok(t) => consider(
                dataset_loss(&t.net, &val.images, &val.labels)?,
                lr,
                long,
                &t.net,
            ),
            Err(MicronetError::Divergence { epoch, .. }) => {
                warn!("fine-tuning diverged at epoch {epoch} with lr {lr}; skipped");
                diverged.push(lr);
            }
            Err(e) => return Err(e),
        }
    }
    let (val_loss, lr, epochs, net) = best.ok_or(MicronetError::Divergence {
        epoch: 0,
        lr: grid.lrs[0],
    })?;
    let logits = forward(&net, &splits.test.images)
        .logits
        .expect("head attached");
    let auc = macro_auc_ovr(&softmax_rows(&logits), &splits.test.labels)?;
    Ok(FineTuneOutcome {
        auc,
        lr,
        epochs,
        val_loss,
        diverged,
    })
}
