//! Run configuration. One TOML file with a section per subcommand; every
//! key can be overridden by the flag of the same name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfr_core::data::Direction;
use tfr_core::metrics::{Metric, MetricConfig};
use tfr_core::rank::RankConfig;
use tfr_micronet::zoo::ZooConfig;

use crate::error::CliError;

pub const SEED_ENV: &str = "TFR_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub score: ScoreSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSection {
    pub target: Option<PathBuf>,
    /// Directory of `*.tfrb` candidate bundles.
    pub bundles: Option<PathBuf>,
    pub metrics: Vec<Metric>,
    pub direction: Direction,
    pub out: Option<PathBuf>,
    pub params: MetricConfig,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self {
            target: None,
            bundles: None,
            metrics: vec![Metric::Ours],
            direction: Direction::InDomain,
            out: None,
            params: MetricConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Score table files or directories of them.
    pub scores: Vec<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Evaluate a ready-made tau table instead of scores + truth.
    pub tau_table: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub rank: RankConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub out: Option<PathBuf>,
    /// Preset source ids.
    pub sources: Vec<String>,
    /// Preset target names.
    pub targets: Vec<String>,
    pub zoo: ZooConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            out: None,
            sources: tfr_micronet::presets::sources()
                .into_iter()
                .map(|s| s.id)
                .collect(),
            targets: vec![tfr_micronet::presets::targets()[0].name.clone()],
            zoo: ZooConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// An EvalReport JSON to render.
    pub input: Option<PathBuf>,
    /// A ground-truth CSV, or `fixture:source-datasets` / `fixture:architectures`.
    pub truth: Option<String>,
    /// Two source ids to compare head to head on the truth table.
    pub compare: Vec<String>,
    pub exclude_self: bool,
    /// `source:target` cells to print from the truth table.
    pub lookup: Vec<String>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Flag, then config file, then `TFR_SEED`, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| CliError::Validation(format!("{SEED_ENV}=`{v}`: {e}"))),
            Err(_) => Ok(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[score]\nmetric = [\"ours\"]").is_err());
        assert!(RunConfig::from_toml("[score.params.nca]\nmax_iters = 3\nfoo = 1").is_err());
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = RunConfig::from_toml(
            "seed = 7\n[score]\nmetrics = [\"ours\", \"leep\"]\ndirection = \"cross_domain\"\n\
             [eval.rank]\nalpha = 0.1\n[synth]\nsources = [\"a\", \"b\"]\n[synth.zoo]\npretrain_per_class = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.score.metrics, vec![Metric::Ours, Metric::Leep]);
        assert_eq!(cfg.score.direction, Direction::CrossDomain);
        assert_eq!(cfg.eval.rank.alpha, 0.1);
        assert_eq!(cfg.synth.zoo.pretrain_per_class, 5);
    }

    #[test]
    fn seed_precedence() {
        let cfg = RunConfig {
            seed: Some(4),
            ..Default::default()
        };
        assert_eq!(cfg.resolve_seed(Some(9)).unwrap(), 9);
        assert_eq!(cfg.resolve_seed(None).unwrap(), 4);
    }
}
