use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hierclass::dataset::Scheme;
use hierclass::hierarchy::{AggregationRule, Topology};
use hierclass::learners::GridPhase;
use hierclass::taxonomy::PrefixMode;

mod commands;
mod failure;

/// Hierarchical classification of specimens over a taxonomy: data splits,
/// training, prediction and evaluation.
#[derive(Debug, Parser)]
#[command(name = "hierclass", version)]
pub struct Cli {
    /// Seed for every random choice [fallback: HIERCLASS_SEED, then `seed` in the config]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key=value settings file; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check or summarize a taxonomy table
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    /// Generate Gaussian benchmark features over a taxonomy
    Synth(SynthArgs),
    /// Write seeded train/val/test splits
    Split(SplitArgs),
    /// Train a flat, per-level or cascade classifier on one split
    Train(TrainArgs),
    /// Predict the test specimens of a split
    Predict(PredictArgs),
    /// Score prediction files (one per split) and aggregate them
    Evaluate(EvaluateArgs),
    /// Combine evaluation reports into one table
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum TaxonomyCmd {
    /// Parse the table and report the first problem
    Validate { file: PathBuf },
    /// Node counts per rank and the label depth histogram
    Stats {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write the bundled 39-label taxonomy
    Fixture {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
    /// 1 clusters labels by clade, 0 ignores the hierarchy
    #[arg(long)]
    pub alignment: Option<f64>,
    /// sibling distance in noise standard deviations
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub per_label: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// comparison or ml
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub n_splits: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// flat, per-level or cascade
    #[arg(long)]
    pub topology: Option<Topology>,
    /// svm or softmax
    #[arg(long)]
    pub learner: Option<String>,
    /// SVM cost values, comma-separated (replaces the default grid)
    #[arg(long)]
    pub c: Option<String>,
    /// RBF kernel widths, comma-separated
    #[arg(long)]
    pub gamma: Option<String>,
    /// single or coarse-refine
    #[arg(long)]
    pub grid_phase: Option<GridPhase>,
    /// ranks for the per-level topology, comma-separated (default: all)
    #[arg(long)]
    pub ranks: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// model bundle written by `train`
    #[arg(long, conflicts_with = "scores", requires_all = ["features", "split"])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// precomputed per-image class scores instead of a model
    #[arg(long, required_unless_present = "model")]
    pub scores: Option<PathBuf>,
    /// average-score or majority-vote
    #[arg(long)]
    pub rule: Option<AggregationRule>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// truth file in prediction layout
    #[arg(long, required_unless_present = "features", conflicts_with = "features")]
    pub truth: Option<PathBuf>,
    /// take truths from the labels of a feature file
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// column name in the table
    #[arg(long, default_value = "system")]
    pub name: String,
    /// partial-credit or strict
    #[arg(long)]
    pub mode: Option<PrefixMode>,
    /// report JSON
    #[arg(long)]
    pub out: PathBuf,
    /// text table (default: stdout)
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(required = true)]
    pub predictions: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// merged report JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// text table (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(failure::exit_code(&err))
        }
    }
}
