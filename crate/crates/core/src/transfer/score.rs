use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::knn::{knn_label_probability, KnnConfig};
use super::TransferError;
use crate::data::{CandidateBundle, Direction, ScoreComponents, ScoreTable, TargetSet};
use crate::nca::{fit_nca, NcaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Product,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombineMode {
    pub variant: Variant,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub nca: NcaConfig,
    pub knn: KnnConfig,
}

/// Sum over samples of the leave-one-out k-NN probability of the true label,
/// measured after projecting the candidate's embeddings with a fitted NCA.
pub fn s_lp(
    target: &TargetSet,
    bundle: &CandidateBundle,
    nca_cfg: &NcaConfig,
    knn_cfg: &KnnConfig,
) -> Result<f64, TransferError> {
    if bundle.n() != target.n() {
        return Err(TransferError::ShapeMismatch(format!(
            "bundle `{}` has {} rows, target `{}` has {}",
            bundle.model_id,
            bundle.n(),
            target.name,
            target.n()
        )));
    }
    let nca_err = |source| TransferError::Nca {
        model_id: bundle.model_id.clone(),
        source,
    };
    let model = fit_nca(&bundle.embeddings, &target.labels, nca_cfg).map_err(nca_err)?;
    let projected = model.project(&bundle.embeddings).map_err(nca_err)?;
    let probs = knn_label_probability(&projected, &target.labels, knn_cfg)?;
    Ok(probs.iter().sum())
}

/// Ratio of the conv2 to the conv1 gradient norm.
pub fn s_fu(grad_norm_conv1: f64, grad_norm_conv2: f64) -> Result<f64, TransferError> {
    if !grad_norm_conv1.is_finite() || !grad_norm_conv2.is_finite() {
        return Err(TransferError::NonFinite(format!(
            "gradient norms ({grad_norm_conv1}, {grad_norm_conv2})"
        )));
    }
    if grad_norm_conv1 == 0.0 {
        return Err(TransferError::ZeroDenominator);
    }
    let ratio = grad_norm_conv2 / grad_norm_conv1;
    if !ratio.is_finite() {
        return Err(TransferError::NonFinite(format!("ratio {ratio}")));
    }
    Ok(ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: BTreeMap<String, f64>,
    /// All inputs were equal; every value was mapped to 0.5.
    pub degenerate: bool,
}

/// Min-max scaling across a pool. `CrossDomain` flips the map so the smallest
/// raw value becomes 1.
pub fn minmax_normalize(
    values: &BTreeMap<String, f64>,
    direction: Direction,
) -> Result<Normalized, TransferError> {
    if values.len() < 2 {
        return Err(TransferError::TooFewCandidates {
            found: values.len(),
        });
    }
    if let Some((id, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(TransferError::NonFinite(format!("value {v} for `{id}`")));
    }
    let min = values.values().copied().fold(f64::INFINITY, f64::min);
    let max = values.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        log::warn!(
            "all {} candidates share the value {min}; normalizing to 0.5",
            values.len()
        );
        return Ok(Normalized {
            values: values.keys().map(|k| (k.clone(), 0.5)).collect(),
            degenerate: true,
        });
    }
    let map = |v: f64| match direction {
        Direction::InDomain => (v - min) / (max - min),
        Direction::CrossDomain => (v - max) / (min - max),
    };
    Ok(Normalized {
        values: values.iter().map(|(k, &v)| (k.clone(), map(v))).collect(),
        degenerate: false,
    })
}

pub fn combine(s_lp_norm: f64, s_fu_norm: Option<f64>, variant: Variant) -> f64 {
    match (s_fu_norm, variant) {
        (None, _) => s_lp_norm,
        (Some(fu), Variant::Product) => s_lp_norm * fu,
        (Some(fu), Variant::Sum) => s_lp_norm + fu,
    }
}

/// Normalizes raw `(S_LP, S_FU)` pairs across the pool and combines them.
///
/// S_FU is used only when every candidate has it; otherwise the whole pool is
/// ranked on normalized S_LP so that scores stay comparable.
pub fn combine_pool(
    raw: &BTreeMap<String, (f64, Option<f64>)>,
    mode: CombineMode,
) -> Result<(BTreeMap<String, f64>, BTreeMap<String, ScoreComponents>), TransferError> {
    if raw.is_empty() {
        return Err(TransferError::EmptyPool);
    }
    let lp: BTreeMap<String, f64> = raw.iter().map(|(k, v)| (k.clone(), v.0)).collect();
    let lp_norm = minmax_normalize(&lp, mode.direction)?.values;
    let all_fu: Option<BTreeMap<String, f64>> = raw
        .iter()
        .map(|(k, v)| v.1.map(|fu| (k.clone(), fu)))
        .collect();
    let fu_norm = match all_fu {
        Some(fu) => Some(minmax_normalize(&fu, mode.direction)?.values),
        None => {
            let missing: Vec<&str> = raw
                .iter()
                .filter(|(_, v)| v.1.is_none())
                .map(|(k, _)| k.as_str())
                .collect();
            log::warn!("no gradient norms for {missing:?}; scoring the pool on S_LP alone");
            None
        }
    };
    let mut scores = BTreeMap::new();
    let mut components = BTreeMap::new();
    for (id, &(s_lp, s_fu)) in raw {
        let s_lp_norm = lp_norm[id];
        let s_fu_norm = fu_norm.as_ref().map(|m| m[id]);
        scores.insert(id.clone(), combine(s_lp_norm, s_fu_norm, mode.variant));
        components.insert(
            id.clone(),
            ScoreComponents {
                s_lp,
                s_fu,
                s_lp_norm,
                s_fu_norm,
            },
        );
    }
    Ok((scores, components))
}

/// Raw S_LP and (when gradient norms are present) S_FU of every candidate.
pub fn raw_components(
    target: &TargetSet,
    bundles: &[CandidateBundle],
    cfg: &ScoreConfig,
) -> Result<BTreeMap<String, (f64, Option<f64>)>, TransferError> {
    if bundles.is_empty() {
        return Err(TransferError::EmptyPool);
    }
    let mut raw = BTreeMap::new();
    for bundle in bundles {
        if raw.contains_key(&bundle.model_id) {
            return Err(TransferError::DuplicateModel(bundle.model_id.clone()));
        }
        let lp = s_lp(target, bundle, &cfg.nca, &cfg.knn)?;
        let fu = bundle
            .grad_norms
            .map(|g| s_fu(g.conv1, g.conv2))
            .transpose()?;
        raw.insert(bundle.model_id.clone(), (lp, fu));
    }
    Ok(raw)
}

pub fn combined_score(
    target: &TargetSet,
    bundles: &[CandidateBundle],
    mode: CombineMode,
    cfg: &ScoreConfig,
) -> Result<ScoreTable, TransferError> {
    let raw = raw_components(target, bundles, cfg)?;
    let (scores, components) = combine_pool(&raw, mode)?;
    let metric_name = match mode.variant {
        Variant::Product => "ours",
        Variant::Sum => "ours-sum",
    };
    Ok(ScoreTable {
        metric_name: metric_name.into(),
        target: target.name.clone(),
        scores,
        components: Some(components),
        mode: mode.direction,
    })
}
