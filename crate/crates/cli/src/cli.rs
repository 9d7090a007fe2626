use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use tfr_core::data::Direction;
use tfr_core::metrics::Metric;
use tfr_core::rank::TieMode;

use crate::commands;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "tfr",
    version,
    about = "Rank pre-trained models by expected transfer performance"
)]
pub struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed (falls back to the config, then TFR_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a pool of candidate bundles for one target set.
    Score(ScoreArgs),
    /// Weighted Kendall tau of score tables against ground truth, ranks and tests.
    Eval(EvalArgs),
    /// Build a micro benchmark: pre-trained sources, bundles and ground truth.
    Synth(SynthArgs),
    /// Human-readable summaries of reports and ground-truth tables.
    Report(ReportArgs),
    /// Check that input files parse and satisfy their invariants.
    Validate(ValidateArgs),
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub bundles: Option<PathBuf>,
    /// Comma-separated: ours, ours-sum, ours-lp, leep, nleep, logme, parc.
    #[arg(long, value_delimiter = ',', value_parser = |s: &str| s.parse::<Metric>().map_err(|e| e.to_string()))]
    pub metrics: Option<Vec<Metric>>,
    /// in_domain or cross_domain.
    #[arg(long, value_parser = serde_enum::<Direction>)]
    pub direction: Option<Direction>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score table files or directories holding them.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub scores: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub tau_table: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// ordinal_by_column_order or average.
    #[arg(long, value_parser = serde_enum::<TieMode>)]
    pub tie_mode: Option<TieMode>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report JSON.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Ground-truth CSV or fixture:source-datasets / fixture:architectures.
    #[arg(long)]
    pub truth: Option<String>,
    /// Two source ids, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub compare: Option<Vec<String>>,
    #[arg(long)]
    pub exclude_self: bool,
    /// `source:target` cells to print, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub lookup: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cfg.resolve_seed(cli.seed)?;
    match cli.command {
        Command::Score(a) => {
            let s = &mut cfg.score;
            s.target = a.target.or(s.target.take());
            s.bundles = a.bundles.or(s.bundles.take());
            s.out = a.out.or(s.out.take());
            if let Some(m) = a.metrics {
                s.metrics = m;
            }
            if let Some(d) = a.direction {
                s.direction = d;
            }
            commands::score::run(&cfg.score, seed)
        }
        Command::Eval(a) => {
            let e = &mut cfg.eval;
            if let Some(s) = a.scores {
                e.scores = s;
            }
            e.truth = a.truth.or(e.truth.take());
            e.tau_table = a.tau_table.or(e.tau_table.take());
            e.out = a.out.or(e.out.take());
            e.csv = a.csv.or(e.csv.take());
            if let Some(t) = a.tie_mode {
                e.rank.tie_mode = t;
            }
            if let Some(alpha) = a.alpha {
                e.rank.alpha = alpha;
            }
            commands::eval::run(&cfg.eval)
        }
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            s.out = a.out.or(s.out.take());
            if let Some(v) = a.sources {
                s.sources = v;
            }
            if let Some(v) = a.targets {
                s.targets = v;
            }
            commands::synth::run(&cfg.synth, seed).map(|_| ())
        }
        Command::Report(a) => {
            let r = &mut cfg.report;
            r.input = a.input.or(r.input.take());
            r.truth = a.truth.or(r.truth.take());
            r.out = a.out.or(r.out.take());
            if let Some(c) = a.compare {
                r.compare = c;
            }
            r.exclude_self |= a.exclude_self;
            if let Some(l) = a.lookup {
                r.lookup = l;
            }
            let text = commands::report::run(&cfg.report)?;
            print!("{text}");
            Ok(())
        }
        Command::Validate(a) => {
            for line in commands::validate::run(&a.paths)? {
                println!("{line}");
            }
            Ok(())
        }
    }
}
