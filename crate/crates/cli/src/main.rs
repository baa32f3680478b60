mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lri_core::layer::Padding;
use lri_core::LriError;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "lri", version, about = "Locally rotation invariant SSE/SSB networks on 3D volumes")]
struct Cli {
    /// Worker threads for data generation and feature extraction
    /// (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Where to write run.json (default: next to the main output, else the
    /// current directory).
    #[arg(long, global = true)]
    run_json: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the rotated-pattern dataset.
    Gen(GenArgs),
    /// Run a toy spectrum/bispectrum experiment.
    Toy(ToyArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a model file on a dataset split.
    Eval(EvalArgs),
    /// Train several seeds on shared features and report mean and 95% CI.
    Sweep(SweepArgs),
    /// Accuracy against the number of training samples.
    LearningCurve(CurveArgs),
    /// Print reference tables.
    Tables(TablesArgs),
    /// Compare analytic and finite-difference layer gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub volume_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub density_min: f64,
    #[arg(long, default_value_t = 0.5)]
    pub density_max: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 1)]
    pub experiment: u8,
    /// Noise standard deviation relative to the peak noiseless value.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    /// Radial scale of the band-pass profile in voxels.
    #[arg(long, default_value_t = 8.0)]
    pub rho0: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingArg {
    Zero,
    None,
}

impl From<PaddingArg> for Padding {
    fn from(p: PaddingArg) -> Self {
        match p {
            PaddingArg::Zero => Padding::Zero,
            PaddingArg::None => Padding::None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// sse, ssb or z3.
    #[arg(long, default_value = "ssb")]
    pub model: String,
    /// Maximal SH degree N (sse/ssb).
    #[arg(long, default_value_t = 2)]
    pub degree: usize,
    /// Streams Q (filters for z3).
    #[arg(long, default_value_t = 2)]
    pub filters: usize,
    #[arg(long, default_value_t = 7)]
    pub kernel_size: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, value_enum, default_value_t = PaddingArg::Zero)]
    pub padding: PaddingArg,
    /// Drop the identically vanishing (n, n, odd l) bispectrum triples.
    #[arg(long)]
    pub prune_zero: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 50_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.99)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.9999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub metrics: PathBuf,
    /// Use only the first N training samples (balanced per class).
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Directory for reusable per-volume feature caches.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for per-seed metrics and the summary.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CurveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Training-set sizes.
    #[arg(long, value_delimiter = ',', default_value = "16,64,200")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub data: PathBuf,
    /// CSV `size,seed,test_accuracy`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableArg {
    FeatureCounts,
    Parameters,
}

#[derive(Debug, Args, Serialize)]
pub struct TablesArgs {
    #[arg(long, value_enum, default_value_t = TableArg::FeatureCounts)]
    pub which: TableArg,
    /// Count bispectrum maps without the identically vanishing triples.
    #[arg(long)]
    pub prune_zero: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Edge length of the random test volume.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn exit_code(e: &LriError) -> u8 {
    match e {
        LriError::Config(_) | LriError::Domain(_) | LriError::Shape(_) => 2,
        LriError::Io { .. } | LriError::Format { .. } => 3,
        LriError::Numerical(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(4);
    }
    let ctx = commands::Context { jobs, run_json: cli.run_json };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&ctx, a),
        Command::Toy(a) => commands::toy(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Sweep(a) => commands::sweep(&ctx, a),
        Command::LearningCurve(a) => commands::learning_curve(&ctx, a),
        Command::Tables(a) => commands::tables(&ctx, a),
        Command::Gradcheck(a) => commands::gradcheck(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
