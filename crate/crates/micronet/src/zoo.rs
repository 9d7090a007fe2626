//! Miniature benchmark: pre-train micro sources, export a candidate bundle
//! per (source, target) pair and fill ground truth by fine-tuning.

use std::collections::BTreeMap;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use tfr_core::data::{CandidateBundle, GradNorms, GroundTruthTable, TargetSet};
use tfr_core::transfer::{
    sample_triplets, triplet_loss_and_embedding_grads, SplitMix64, TripletConfig,
};

use crate::dataset::{
    generate, generate_splits, pooled_descriptor, GeneratorSpec, SplitSpec, Splits,
};
use crate::finetune::{fine_tune_auc, HyperGrid};
use crate::net::{backward_from_embedding_grads, forward, softmax_rows, MicroNet, ParamGroup};
use crate::train::{train, TrainConfig};
use crate::MicronetError;

pub const ARCHITECTURE: &str = "micronet-2conv";

/// A source is pre-trained on `generator`, or left at random init when it is
/// `None` (with an untrained head of `random_head_classes`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub id: String,
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZooConfig {
    pub pretrain: TrainConfig,
    /// Images per class for source pre-training.
    pub pretrain_per_class: usize,
    pub random_head_classes: usize,
    pub split: SplitSpec,
    pub grid: HyperGrid,
    pub triplet: TripletConfig,
}

impl Default for ZooConfig {
    fn default() -> Self {
        Self {
            pretrain: TrainConfig::default(),
            pretrain_per_class: 30,
            random_head_classes: 4,
            split: SplitSpec {
                train: 12,
                val: 8,
                test: 20,
            },
            grid: HyperGrid::default(),
            triplet: TripletConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TargetBundles {
    pub target: TargetSet,
    pub bundles: Vec<CandidateBundle>,
}

#[derive(Debug, Clone)]
pub struct MicroZoo {
    pub sources: Vec<(String, MicroNet)>,
    pub targets: Vec<TargetBundles>,
    /// Fine-tuned test AUC x100, sources x targets.
    pub ground_truth: GroundTruthTable,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    SplitMix64::new(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)).next_u64()
}

pub fn pretrain_source(
    spec: &SourceSpec,
    cfg: &ZooConfig,
    seed: u64,
) -> Result<MicroNet, MicronetError> {
    let Some(generator) = &spec.generator else {
        return Ok(MicroNet::new(Some(cfg.random_head_classes), seed));
    };
    let c = generator.num_classes();
    let data = generate(generator, cfg.pretrain_per_class * c, derive_seed(seed, 1))?;
    let net = MicroNet::new(Some(c), seed);
    let tcfg = TrainConfig {
        seed: derive_seed(seed, 2),
        ..cfg.pretrain
    };
    let trained = train(&net, &data.images, &data.labels, &tcfg)?;
    info!(
        "pre-trained {}: loss {:.3} -> {:.3}",
        spec.id,
        trained.initial_loss,
        trained.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(trained.net)
}

/// Embeddings, source-head probabilities and triplet-gradient norms of `net`
/// on the target's training split.
pub fn extract_bundle(
    model_id: &str,
    source_dataset: &str,
    net: &MicroNet,
    splits: &Splits,
    triplet: &TripletConfig,
) -> Result<CandidateBundle, MicronetError> {
    let train = &splits.train;
    let f = forward(net, &train.images);
    let triplets = sample_triplets(&train.labels, triplet)?;
    let tl = triplet_loss_and_embedding_grads(
        &f.embeddings,
        &triplets,
        triplet.margin,
        triplet.reduction,
    )?;
    let grads = backward_from_embedding_grads(net, &f.cache, &tl.grad)?;
    let grad_norms = GradNorms {
        conv1: grads.group_norm(ParamGroup::Conv1Weight),
        conv2: grads.group_norm(ParamGroup::Conv2Weight),
    };
    // no active triplet means no feature-update signal; leave the norms out
    // rather than export a zero denominator
    let grad_norms = if grad_norms.conv1 > 0.0 {
        Some(grad_norms)
    } else {
        warn!(
            "{model_id}: zero conv1 triplet gradient on {}; grad norms omitted",
            train.spec.name
        );
        None
    };
    let mut provenance = BTreeMap::new();
    provenance.insert("target".to_string(), train.spec.name.clone());
    provenance.insert("seed".to_string(), train.seed.to_string());
    provenance.insert(
        "active_triplets".to_string(),
        format!("{}/{}", tl.active, triplets.len()),
    );
    let bundle = CandidateBundle {
        model_id: model_id.to_string(),
        source_dataset: source_dataset.to_string(),
        architecture: ARCHITECTURE.to_string(),
        embeddings: f.embeddings,
        source_probs: f.logits.as_ref().map(softmax_rows),
        grad_norms,
        provenance,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn make_micro_zoo(
    sources: &[SourceSpec],
    targets: &[GeneratorSpec],
    cfg: &ZooConfig,
    seed: u64,
) -> Result<MicroZoo, MicronetError> {
    if sources.len() < 3 {
        return Err(MicronetError::InvalidSpec(format!(
            "{} sources, need at least 3",
            sources.len()
        )));
    }
    if targets.is_empty() {
        return Err(MicronetError::InvalidSpec("no targets".into()));
    }
    let mut nets = Vec::with_capacity(sources.len());
    for (k, s) in sources.iter().enumerate() {
        nets.push((
            s.id.clone(),
            pretrain_source(s, cfg, derive_seed(seed, 100 + k as u64))?,
        ));
    }
    let mut values = vec![vec![None; targets.len()]; sources.len()];
    let mut out = Vec::with_capacity(targets.len());
    for (t, spec) in targets.iter().enumerate() {
        let tseed = derive_seed(seed, 200 + t as u64);
        let splits = generate_splits(spec, cfg.split, tseed)?;
        let target = TargetSet::new(
            spec.name.clone(),
            pooled_descriptor(&splits.train.images),
            splits.train.labels.clone(),
            spec.num_classes(),
        )?;
        let triplet = TripletConfig {
            seed: tseed,
            ..cfg.triplet
        };
        let mut bundles = Vec::with_capacity(sources.len());
        for (m, (id, net)) in nets.iter().enumerate() {
            let source_dataset = sources[m]
                .generator
                .as_ref()
                .map_or("random-init", |g| g.name.as_str());
            bundles.push(extract_bundle(id, source_dataset, net, &splits, &triplet)?);
            let outcome = fine_tune_auc(net, &splits, &cfg.grid, derive_seed(tseed, m as u64))?;
            info!(
                "{id} -> {}: AUC {:.4} (lr {}, {} epochs)",
                spec.name, outcome.auc, outcome.lr, outcome.epochs
            );
            values[m][t] = Some(outcome.auc * 100.0);
        }
        out.push(TargetBundles { target, bundles });
    }
    let ground_truth = GroundTruthTable::new(
        sources.iter().map(|s| s.id.clone()).collect(),
        targets.iter().map(|t| t.name.clone()).collect(),
        values,
    )?;
    Ok(MicroZoo {
        sources: nets,
        targets: out,
        ground_truth,
    })
}
