use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod classifier;
mod commands;
mod config;
mod manifest;
mod model;

#[derive(Parser)]
#[command(name = "repdensity", version, about = "Class-conditional density models for vector representations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print size, class histogram and finiteness of a representation file as JSON.
    Inspect { file: PathBuf },
    /// Project representations onto their leading right-singular vectors.
    Reduce(ReduceArgs),
    /// Fit one class and write its snapshot archive.
    Fit(FitArgs),
    /// Per-row log-density under a fitted class model.
    Density(DensityArgs),
    /// Monte-Carlo KL divergence from a fitted model to a reference.
    Kl(KlArgs),
    /// Fit every class and write the per-class analysis tables.
    Analyze(AnalyzeArgs),
    /// Generative classification with fitted class models.
    Classify(ClassifyArgs),
    /// Randomized-smoothing certification against an external classifier.
    Certify(CertifyArgs),
    /// Memorization scores from trial records.
    MemScores(MemScoresArgs),
}

#[derive(Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Index into the configured per-stage SVD targets.
    #[arg(long, default_value_t = 0)]
    pub stage_index: usize,
    /// Output dimension; overrides the configured target.
    #[arg(long, conflicts_with = "variance")]
    pub dims: Option<usize>,
    /// Smallest dimension capturing this fraction of the variance.
    #[arg(long)]
    pub variance: Option<f64>,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub class: u32,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub repr: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct KlArgs {
    #[arg(long)]
    pub p: PathBuf,
    /// Another archive, or `maxent` for the diagonal Gaussian fitted to p's data.
    #[arg(long)]
    pub q: String,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Memorization scores as CSV (example_id, score).
    #[arg(long, conflicts_with = "trials")]
    pub memorization: Option<PathBuf>,
    /// Trial records to compute memorization scores from.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Held-out representations for predictions.csv; the input is used when absent.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Classes fitted concurrently (default: all available threads).
    #[arg(long)]
    pub parallel_classes: Option<usize>,
}

#[derive(Args)]
pub struct ClassifyArgs {
    /// Class archives from `fit`.
    #[arg(long, required = true, num_args = 1..)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub repr: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub points: PathBuf,
    /// Shell command of the base classifier.
    #[arg(long)]
    pub classifier: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-example densities from `density`; adds a per-bin report.
    #[arg(long)]
    pub density: Option<PathBuf>,
}

#[derive(Args)]
pub struct MemScoresArgs {
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Representation file whose labels select the memorization subsets.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Core(repdensity::Error),
    Config { path: String, message: String },
}

impl From<repdensity::Error> for CliError {
    fn from(e: repdensity::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Core(e) => {
                let mut v = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
                if let repdensity::Error::Io { path, .. } = e {
                    v["path"] = path.display().to_string().into();
                }
                serde_json::json!({ "error": v })
            }
            CliError::Config { path, message } => serde_json::json!({
                "error": { "kind": "configuration", "message": message, "path": path }
            }),
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("REPDENSITY_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| repdensity::Error::Configuration(format!("REPDENSITY_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| repdensity::Error::Configuration(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Cmd::Inspect { file } => commands::inspect(&file),
        Cmd::Reduce(a) => commands::reduce(&a),
        Cmd::Fit(a) => commands::fit(&a),
        Cmd::Density(a) => commands::density(&a),
        Cmd::Kl(a) => commands::kl(&a),
        Cmd::Analyze(a) => commands::analyze(&a),
        Cmd::Classify(a) => commands::classify(&a),
        Cmd::Certify(a) => commands::certify(&a),
        Cmd::MemScores(a) => commands::mem_scores(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
