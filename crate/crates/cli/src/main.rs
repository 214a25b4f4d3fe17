mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::config::{resolve_seed, RunConfig, SEED_ENV};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "infometer", version, about = "Mutual information estimation with learned entropy models")]
struct Cli {
    /// Seed for every random choice (overrides INFOMETER_SEED and the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic paired dataset
    Generate(GenerateArgs),
    /// Train the X, Y and joint branches on a dataset
    Train(TrainArgs),
    /// Estimate MI from trained branches, or assemble it from given entropies
    Estimate(EstimateArgs),
    /// Apply a perturbation to a dataset
    Perturb(PerturbArgs),
    /// Run the benchmark conditions listed in the config
    Benchmark(BenchmarkArgs),
    /// Turn JSON reports and checkpoints into CSV tables and SVG plots
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum GeneratorKind {
    Independent,
    Identical,
    GaussianPair,
    DiscreteIid,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    generator: Option<GeneratorKind>,
    /// Marginal for independent/identical, e.g. gaussian:0:1 or uniform-int:0:3
    #[arg(long)]
    marginal: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    /// Comma-separated probabilities for discrete-iid
    #[arg(long)]
    pmf: Option<String>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(short = 'n', long)]
    samples: Option<usize>,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ConcatArg {
    Tiling,
    Quilting,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DensityArg {
    Factorized,
    Autoregressive,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum InitArg {
    Data,
    Uniform,
}

/// Overrides for the estimator section of the config.
#[derive(Args, Debug, Default)]
struct EstimatorArgs {
    #[arg(long, value_enum)]
    concat: Option<ConcatArg>,
    /// Use the tiled joint map of the original setup
    #[arg(long)]
    paper_fidelity: bool,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    taps: Option<usize>,
    #[arg(long, value_enum)]
    density: Option<DensityArg>,
    /// Side of the causal context window
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_initial: Option<f64>,
    #[arg(long)]
    lr_late: Option<f64>,
    #[arg(long)]
    switch_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory to create
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    estimator: EstimatorArgs,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("input").required(true).args(["checkpoint", "constituents"])))]
struct EstimateArgs {
    /// Checkpoint directory written by `train`
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    /// Dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Bits per element of X, Y and the joint map, e.g. 6.0,5.8,6.1
    #[arg(long, conflicts_with = "checkpoint", value_delimiter = ',', num_args = 1..=3, allow_negative_numbers = true)]
    constituents: Option<Vec<f64>>,
    /// Elements per source map when assembling from --constituents
    #[arg(long, default_value_t = 1, requires = "constituents")]
    element_count: u64,
    /// Expected joint concatenation; a mismatch with the checkpoint is an error
    #[arg(long, value_enum)]
    concat: Option<ConcatArg>,
    /// Report file (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TargetArg {
    X,
    Y,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MaskShapeArg {
    Rectangles,
    Blobs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StatArg {
    Variance,
    BlobCount,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("kind").required(true).args(["noise_snr", "mask_frac", "split"])))]
struct PerturbArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Additive Gaussian noise at this SNR in dB
    #[arg(long, allow_negative_numbers = true)]
    noise_snr: Option<f64>,
    /// Replace this fraction of each map with resampled values
    #[arg(long)]
    mask_frac: Option<f64>,
    /// Mask random rectangles, or whole bright blobs
    #[arg(long, value_enum, default_value = "rectangles", requires = "mask_frac")]
    mask_shape: MaskShapeArg,
    /// Sort by a statistic and split into --bins subsets
    #[arg(long, value_enum)]
    split: Option<StatArg>,
    #[arg(long, default_value_t = 3)]
    bins: usize,
    /// Keep only this bin (0-based); all bins are written when absent
    #[arg(long)]
    bin: Option<usize>,
    #[arg(long, value_enum, default_value = "x")]
    target: TargetArg,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Output directory for benchmark.json, benchmark.csv and benchmark.svg
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    estimator: EstimatorArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Benchmark or estimate reports (JSON), or checkpoint directories
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Conventions for the comparison table; more than one needs --allow-mixed
    #[arg(long, value_delimiter = ',', default_value = "bits-per-x-element")]
    convention: Vec<String>,
    #[arg(long)]
    allow_mixed: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, env.as_deref(), config.seed)?;
    log::info!("seed {} ({:?})", seed.seed, seed.source);
    match cli.command {
        Command::Generate(a) => commands::generate(a, &config, seed),
        Command::Train(a) => commands::train(a, &config, seed),
        Command::Estimate(a) => commands::estimate(a, seed),
        Command::Perturb(a) => commands::perturb(a, seed),
        Command::Benchmark(a) => commands::benchmark(a, &config, seed),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
