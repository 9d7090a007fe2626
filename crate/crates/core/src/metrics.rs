//! Uniform entry point for scoring a candidate pool with any supported metric.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{leep, logme, nleep, parc, BaselineError, NleepConfig};
use crate::data::{CandidateBundle, Direction, ScoreComponents, ScoreTable, TargetSet};
use crate::nca::NcaConfig;
use crate::transfer::score::raw_components;
use crate::transfer::{
    combined_score, minmax_normalize, CombineMode, KnnConfig, ScoreConfig, TransferError, Variant,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Normalized S_LP times normalized S_FU.
    Ours,
    /// Normalized S_LP plus normalized S_FU.
    OursSum,
    /// Normalized S_LP alone.
    OursLp,
    Leep,
    Nleep,
    Logme,
    Parc,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Ours,
        Metric::OursSum,
        Metric::OursLp,
        Metric::Leep,
        Metric::Nleep,
        Metric::Logme,
        Metric::Parc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ours => "ours",
            Metric::OursSum => "ours-sum",
            Metric::OursLp => "ours-lp",
            Metric::Leep => "leep",
            Metric::Nleep => "nleep",
            Metric::Logme => "logme",
            Metric::Parc => "parc",
        }
    }

    /// Baselines whose score is reported as `1 - S` in the cross-domain setting.
    fn inverted_cross_domain(self) -> bool {
        matches!(self, Metric::Leep | Metric::Nleep | Metric::Parc)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| MetricError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("metric `{metric}` cannot score `{model_id}`: {reason}")]
    Precondition {
        metric: Metric,
        model_id: String,
        reason: String,
    },
    #[error("metric `{metric}` failed on `{model_id}`: {source}")]
    Baseline {
        metric: Metric,
        model_id: String,
        #[source]
        source: BaselineError,
    },
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub nca: NcaConfig,
    pub knn: KnnConfig,
    pub nleep: NleepConfig,
}

impl MetricConfig {
    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig {
            nca: self.nca,
            knn: self.knn,
        }
    }
}

fn check_pool(
    metric: Metric,
    target: &TargetSet,
    bundles: &[CandidateBundle],
) -> Result<(), MetricError> {
    if bundles.len() < 2 {
        return Err(TransferError::TooFewCandidates {
            found: bundles.len(),
        }
        .into());
    }
    let mut seen = BTreeSet::new();
    for b in bundles {
        if !seen.insert(b.model_id.as_str()) {
            return Err(TransferError::DuplicateModel(b.model_id.clone()).into());
        }
        if b.n() != target.n() {
            return Err(MetricError::Precondition {
                metric,
                model_id: b.model_id.clone(),
                reason: format!("{} embedding rows for {} target samples", b.n(), target.n()),
            });
        }
    }
    Ok(())
}

fn baseline_score(
    metric: Metric,
    target: &TargetSet,
    bundle: &CandidateBundle,
    cfg: &MetricConfig,
) -> Result<f64, MetricError> {
    let (labels, classes) = (&target.labels, target.num_classes);
    let result = match metric {
        Metric::Leep => {
            let theta = bundle
                .source_probs
                .as_ref()
                .ok_or_else(|| MetricError::Precondition {
                    metric,
                    model_id: bundle.model_id.clone(),
                    reason: "bundle has no source_probs".into(),
                })?;
            leep(theta, labels, classes)
        }
        Metric::Nleep => nleep(&bundle.embeddings, labels, classes, &cfg.nleep),
        Metric::Logme => logme(&bundle.embeddings, labels, classes),
        Metric::Parc => parc(&bundle.embeddings, labels, classes),
        Metric::Ours | Metric::OursSum | Metric::OursLp => unreachable!("not a baseline"),
    };
    result.map_err(|source| MetricError::Baseline {
        metric,
        model_id: bundle.model_id.clone(),
        source,
    })
}

/// Scores every candidate of the pool for `target`. Output is keyed and
/// ordered by model id, independent of the order of `bundles`.
pub fn score_pool(
    metric: Metric,
    target: &TargetSet,
    bundles: &[CandidateBundle],
    direction: Direction,
    cfg: &MetricConfig,
) -> Result<ScoreTable, MetricError> {
    check_pool(metric, target, bundles)?;
    let table = |scores, components| ScoreTable {
        metric_name: metric.name().into(),
        target: target.name.clone(),
        scores,
        components,
        mode: direction,
    };
    match metric {
        Metric::Ours | Metric::OursSum => {
            let variant = if metric == Metric::Ours {
                Variant::Product
            } else {
                Variant::Sum
            };
            let mode = CombineMode { variant, direction };
            Ok(combined_score(target, bundles, mode, &cfg.score_config())?)
        }
        Metric::OursLp => {
            let raw = raw_components(target, bundles, &cfg.score_config())?;
            let lp: BTreeMap<String, f64> = raw.iter().map(|(k, v)| (k.clone(), v.0)).collect();
            let norm = minmax_normalize(&lp, direction)?.values;
            let components = raw
                .iter()
                .map(|(k, &(s_lp, s_fu))| {
                    let c = ScoreComponents {
                        s_lp,
                        s_fu,
                        s_lp_norm: norm[k],
                        s_fu_norm: None,
                    };
                    (k.clone(), c)
                })
                .collect();
            Ok(table(norm, Some(components)))
        }
        _ => {
            let invert = direction == Direction::CrossDomain && metric.inverted_cross_domain();
            let mut scores = BTreeMap::new();
            for b in bundles {
                let s = baseline_score(metric, target, b, cfg)?;
                scores.insert(b.model_id.clone(), if invert { 1.0 - s } else { s });
            }
            Ok(table(scores, None))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn fixture() -> (TargetSet, Vec<CandidateBundle>) {
        let n = 24;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let target = TargetSet::new(
            "t",
            DMatrix::from_fn(n, 2, |i, j| (i + j) as f64),
            labels.clone(),
            2,
        )
        .unwrap();
        let make = |id: &str, sep: f64, probs: bool| CandidateBundle {
            model_id: id.into(),
            source_dataset: id.into(),
            architecture: "net".into(),
            embeddings: DMatrix::from_fn(n, 4, |i, j| {
                labels[i] as f64 * sep * (j == 0) as u8 as f64
                    + ((i * 31 + j * 17) % 13) as f64 / 13.0
            }),
            source_probs: probs.then(|| {
                DMatrix::from_fn(n, 2, |i, j| {
                    if j == labels[i] {
                        0.5 + sep / 20.0
                    } else {
                        0.5 - sep / 20.0
                    }
                })
            }),
            grad_norms: None,
            provenance: BTreeMap::new(),
        };
        (
            target,
            vec![
                make("b", 1.0, true),
                make("a", 5.0, true),
                make("c", 0.0, false),
            ],
        )
    }

    #[test]
    fn names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.name())
            );
        }
        assert!("nope".parse::<Metric>().is_err());
    }

    #[test]
    fn leep_without_probs_names_the_bundle() {
        let (t, pool) = fixture();
        let err = score_pool(
            Metric::Leep,
            &t,
            &pool,
            Direction::InDomain,
            &MetricConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(&err, MetricError::Precondition { model_id, .. } if model_id == "c"));
        assert!(err.to_string().contains("`c`"));
    }

    #[test]
    fn baselines_prefer_separated_candidate() {
        let (t, pool) = fixture();
        let cfg = MetricConfig::default();
        for m in [Metric::Logme, Metric::Parc, Metric::Nleep, Metric::OursLp] {
            let s = score_pool(m, &t, &pool, Direction::InDomain, &cfg).unwrap();
            assert_eq!(s.scores.keys().collect::<Vec<_>>(), ["a", "b", "c"]);
            assert_eq!(s.argmax_model().unwrap().0, "a", "{m}");
        }
    }

    #[test]
    fn cross_domain_inverts_selected_baselines() {
        let (t, pool) = fixture();
        let pool = &pool[..2];
        let cfg = MetricConfig::default();
        let ind = score_pool(Metric::Leep, &t, pool, Direction::InDomain, &cfg).unwrap();
        let cross = score_pool(Metric::Leep, &t, pool, Direction::CrossDomain, &cfg).unwrap();
        for (k, v) in &ind.scores {
            assert_eq!(cross.scores[k], 1.0 - v);
        }
        let ind = score_pool(Metric::Logme, &t, pool, Direction::InDomain, &cfg).unwrap();
        let cross = score_pool(Metric::Logme, &t, pool, Direction::CrossDomain, &cfg).unwrap();
        assert_eq!(ind.scores, cross.scores);
    }

    #[test]
    fn pool_preconditions() {
        let (t, pool) = fixture();
        let cfg = MetricConfig::default();
        assert_eq!(
            score_pool(Metric::Parc, &t, &pool[..1], Direction::InDomain, &cfg),
            Err(MetricError::Transfer(TransferError::TooFewCandidates {
                found: 1
            }))
        );
        let mut short = pool.clone();
        short[0].embeddings = DMatrix::zeros(3, 4);
        assert!(matches!(
            score_pool(Metric::Parc, &t, &short, Direction::InDomain, &cfg),
            Err(MetricError::Precondition { .. })
        ));
    }
}
