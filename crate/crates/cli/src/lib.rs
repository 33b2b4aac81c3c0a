//! `situate` command line: synthetic corpus generation, training, single-image
//! runs with traces, corpus ranking and method comparison.

pub mod commands;
pub mod error;
pub mod inputs;
pub mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, EXIT_IO, EXIT_VALIDATION};
pub use inputs::EngineArgs;

#[derive(Debug, Parser)]
#[command(name = "situate", version, about = "Ground multi-object situations in images and rank images by match score")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus, its oracle feature description and a manifest
    Synth(SynthArgs),
    /// Learn the situation model from positive training annotations
    Train(TrainArgs),
    /// Ground the situation in one image, optionally writing a trace and an SVG strip
    Run(RunArgs),
    /// Score every test image and write the ranking as CSV, one file per seed
    Rank(RankArgs),
    /// Recall@N table for one method
    Eval(EvalArgs),
    /// Recall@N table for all four methods
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON corpus settings; omitted fields take the defaults
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Situation file (name and ordered categories)
    #[arg(long)]
    pub spec: PathBuf,
    /// Training annotations (JSON lines)
    #[arg(long)]
    pub annotations: PathBuf,
    /// Oracle document (.json) or feature store
    #[arg(long)]
    pub features: PathBuf,
    /// Model document to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

/// Inputs shared by every command that runs the trained model on test images.
#[derive(Debug, Args)]
pub struct TestInputs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test annotations (JSON lines)
    #[arg(long)]
    pub annotations: PathBuf,
    /// Detector priors (JSON lines)
    #[arg(long)]
    pub priors: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub inputs: TestInputs,
    #[arg(long = "image-id")]
    pub image_id: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON-lines trace, one event per agent
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// SVG strip of selected iterations
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Panels in the SVG strip
    #[arg(long, default_value_t = 8)]
    pub panels: usize,
    /// Run summary (JSON); printed to stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SeedArgs {
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated list or half-open range such as `0..10`
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Seeds>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

impl SeedArgs {
    pub fn resolve(&self, default: &[u64]) -> Vec<u64> {
        match (&self.seeds, self.seed) {
            (Some(s), _) => s.0.clone(),
            (None, Some(s)) => vec![s],
            (None, None) => default.to_vec(),
        }
    }
}

pub fn parse_seeds(s: &str) -> Result<Seeds, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
        if a >= b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(Seeds((a..b).collect()));
    }
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|e| format!("bad seed {x:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err("no seeds".into());
    }
    Ok(Seeds(v))
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub inputs: TestInputs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Output directory for `ranking-seed-<seed>.csv`; a single seed prints to stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Situate,
    Uniform,
    Topbox,
    Irsg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "situate")]
    pub method: Method,
    #[command(flatten)]
    pub inputs: TestInputs,
    /// Training annotations, used to fit the pairwise mixtures for IRSG
    #[arg(long = "train-annotations")]
    pub train_annotations: Option<PathBuf>,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[arg(long = "top-k-irsg", default_value_t = situate_core::evaluation::DEFAULT_IRSG_TOP_K)]
    pub top_k_irsg: usize,
    /// Recall table (JSON)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub inputs: TestInputs,
    #[arg(long = "train-annotations")]
    pub train_annotations: PathBuf,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[arg(long = "top-k-irsg", default_value_t = situate_core::evaluation::DEFAULT_IRSG_TOP_K)]
    pub top_k_irsg: usize,
    /// Comparison report (JSON)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

/// Parses `args` and runs the subcommand, writing normal output to `stdout`.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(stdout, "{e}")?;
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::Validation(first.trim_start_matches("error: ").to_string()));
        }
    };
    commands::dispatch(cli.command, stdout)
}

/// Process entry point: returns the exit code.
pub fn main_entry() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run_cli(std::env::args_os(), &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
