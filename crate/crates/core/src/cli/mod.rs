//! Command-line interface: argument definitions and dispatch.

mod experiments;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Result;
use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand};

use crate::experts::PropagationKind;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub use experiments::{
    cmd_ablate, cmd_compare_routing, cmd_export_routing, cmd_generate_sbm, cmd_observe_subspaces, cmd_train,
    cmd_verify_theory, Variant, ABLATIONS,
};

#[derive(Debug, Parser)]
#[command(name = "gnnmoe", version, about = "Mixture-of-experts node classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model variant over a seed list.
    Train(TrainCmd),
    /// Compare the four single-expert schemes per homophily/degree subspace.
    ObserveSubspaces(ObserveCmd),
    /// Compare soft, mean, hard top-k and dot-attention routing.
    CompareRouting(CompareCmd),
    /// Run ablation variants.
    Ablate(AblateCmd),
    /// Check the closed-form routing update and its consequences numerically.
    VerifyTheory(TheoryCmd),
    /// Collect per-block mean routing weights of finished runs side by side.
    ExportRouting(ExportCmd),
    /// Write a stochastic block model dataset.
    GenerateSbm(SbmCmd),
}

/// Flags shared by every training command.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory (edges.tsv, features.bin, labels.tsv, optional splits.json).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "gcn")]
    pub prop: PropagationKind,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.01, value_parser = non_negative)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5, value_parser = dropout_rate)]
    pub dropout: f64,
    #[arg(long, default_value_t = 5e-4, value_parser = non_negative)]
    pub weight_decay: f64,
    /// Routing-entropy coefficient.
    #[arg(long, default_value_t = 0.01, value_parser = non_negative)]
    pub lambda: f64,
    /// `A..B` (inclusive), `A,B,C` or a single seed.
    #[arg(long, default_value = "0..9", value_parser = parse_seeds)]
    pub seeds: SeedList,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub epochs: usize,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub patience: usize,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    /// Base configuration; the seed is filled in per run.
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                hidden: self.hidden,
                blocks: self.blocks,
                prop: self.prop,
                dropout: self.dropout,
                ..Default::default()
            },
            lr: self.lr,
            weight_decay: self.weight_decay,
            lambda: self.lambda,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub common: TrainArgs,
    #[arg(long, alias = "ablate", default_value = "full")]
    pub variant: Variant,
    /// Router softmax temperature used by `delta-tau`.
    #[arg(long, default_value_t = experiments::DEFAULT_DELTA_TAU, value_parser = positive)]
    pub temperature: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ObserveCmd {
    #[command(flatten)]
    pub common: TrainArgs,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub homophily_bins: usize,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub degree_bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CompareCmd {
    #[command(flatten)]
    pub common: TrainArgs,
    /// Only this hard top-k variant instead of k = 1, 2, 3.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=4).map(|v| v as usize))]
    pub topk: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateCmd {
    #[command(flatten)]
    pub common: TrainArgs,
    /// Comma-separated variant names; all six ablations when omitted.
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<Variant>,
    #[arg(long, default_value_t = experiments::DEFAULT_DELTA_TAU, value_parser = positive)]
    pub temperature: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TheoryCmd {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 50)]
    pub corollary_instances: usize,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub lambda_points: usize,
    /// Simplex grid resolution of the brute-force search.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub grid_resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportCmd {
    /// Finished run directories, e.g. one trained with `--lambda 0` and one with `--lambda 1`.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SbmCmd {
    #[arg(long, default_value_t = 400)]
    pub nodes: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.05, value_parser = probability)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.005, value_parser = probability)]
    pub p_out: f64,
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub noise: f64,
    /// Make only the first N classes assortative; the rest link across each other.
    #[arg(long)]
    pub assortative: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

pub fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    let s = s.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| format!("bad range end in {s:?}"))?;
        if b < a {
            return Err(format!("empty seed range {s:?}"));
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| format!("bad seed {t:?}")))
            .collect::<std::result::Result<_, _>>()?
    };
    let mut dedup = seeds.clone();
    dedup.sort_unstable();
    dedup.dedup();
    if dedup.len() != seeds.len() {
        return Err(format!("duplicate seeds in {s:?}"));
    }
    Ok(SeedList(seeds))
}

fn float(s: &str) -> std::result::Result<f64, String> {
    let v = f64::from_str(s).map_err(|e| e.to_string())?;
    if !v.is_finite() {
        return Err("must be finite".into());
    }
    Ok(v)
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    float(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err("must be >= 0".into()) })
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    float(s).and_then(|v| if v > 0.0 { Ok(v) } else { Err("must be > 0".into()) })
}

fn probability(s: &str) -> std::result::Result<f64, String> {
    float(s).and_then(|v| if (0.0..=1.0).contains(&v) { Ok(v) } else { Err("must lie in [0, 1]".into()) })
}

fn dropout_rate(s: &str) -> std::result::Result<f64, String> {
    float(s).and_then(|v| if (0.0..1.0).contains(&v) { Ok(v) } else { Err("must lie in [0, 1)".into()) })
}

/// Runs a parsed command. `Ok(ExitCode::FAILURE)` means the command finished
/// but a check failed.
pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::ObserveSubspaces(c) => cmd_observe_subspaces(&c),
        Command::CompareRouting(c) => cmd_compare_routing(&c),
        Command::Ablate(c) => cmd_ablate(&c),
        Command::VerifyTheory(c) => cmd_verify_theory(&c),
        Command::ExportRouting(c) => cmd_export_routing(&c),
        Command::GenerateSbm(c) => cmd_generate_sbm(&c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..9").unwrap().0, (0..10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("0..=2").unwrap().0, vec![0, 1, 2]);
        assert_eq!(parse_seeds("4").unwrap().0, vec![4]);
        assert_eq!(parse_seeds("0,2,5").unwrap().0, vec![0, 2, 5]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("1,1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn defaults_match_model_defaults() {
        let cli = Cli::try_parse_from(["gnnmoe", "train", "--data", "d", "--out", "o"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        let cfg = t.common.config();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.patience, 100);
        assert_eq!(t.common.seeds.0.len(), 10);
    }

    #[test]
    fn out_of_range_flags_are_usage_errors() {
        for bad in [["--dropout", "1.0"], ["--lr", "-1"], ["--hidden", "0"], ["--seeds", "5..1"]] {
            let err = Cli::try_parse_from(["gnnmoe", "train", "--data", "d", "--out", "o", bad[0], bad[1]]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad:?}");
        }
    }
}
