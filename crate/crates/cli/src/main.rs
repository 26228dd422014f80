//! `freqscale` command-line tool.
//!
//! Exit status: 0 on success, 2 for usage and configuration errors, 1 for
//! runtime failures. Diagnostics go to stderr.

mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "freqscale", version, about = "Learn and evaluate frequency-dependent quantization scaling lists")]
pub struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one scaling matrix on a PNM corpus.
    Train(TrainArgs),
    /// Train a grid of (c, lambda) configurations.
    Sweep(SweepArgs),
    /// Encode one image with a scaling list and report rate and quality.
    Encode(EncodeArgs),
    /// Sweep QPs for several scaling lists and report BD-rates against an anchor.
    Evaluate(EvaluateArgs),
    /// Compute BD-rates between two saved RD curves.
    Compare(CompareArgs),
    /// Combine per-size matrices into one scaling list.
    Export(ExportArgs),
    /// Write a deterministic synthetic PNM corpus.
    Synth(SynthArgs),
    /// Answer task-loss bridge requests on stdin/stdout with a built-in proxy.
    ServeProxy(ServeProxyArgs),
    /// Re-run the command recorded in a manifest file.
    Replay(ReplayArgs),
}

/// Training options shared by `train` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct TrainOptions {
    /// Directory of .ppm/.pgm training images.
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Transform block size: 2, 4, 8, 16, 32 or 64.
    #[arg(long, value_name = "B")]
    pub block_size: usize,
    /// Training epochs.
    #[arg(long, default_value_t = freqscale::trainer::DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Patches per optimizer step.
    #[arg(long, default_value_t = freqscale::trainer::DEFAULT_BATCH)]
    pub batch: usize,
    /// Seed for patch cropping, shuffling and noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Task-loss proxy: lowfreq-mse, lowfreq-mse:<k>, edge-mse or external.
    #[arg(long, default_value = "lowfreq-mse")]
    pub proxy: String,
    /// Command for the external proxy, split on whitespace.
    #[arg(long, value_name = "CMD")]
    pub bridge_cmd: Option<String>,
    /// Seconds to wait for each external proxy response.
    #[arg(long, default_value_t = 60.0, value_name = "SECS")]
    pub bridge_timeout: f64,
    /// Training patch size, `N` or `HxW`.
    #[arg(long, default_value = "64")]
    pub patch: String,
    /// Learning rate for the first half of the epochs.
    #[arg(long, default_value_t = freqscale::trainer::DEFAULT_LR)]
    pub lr: f64,
    /// Learning rate for the remaining epochs.
    #[arg(long, default_value_t = freqscale::trainer::DEFAULT_LR_AFTER_HALF)]
    pub lr_after_half: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub opts: TrainOptions,
    /// Noise strength c.
    #[arg(long = "c", value_name = "REAL")]
    pub c: f64,
    /// Rate-loss weight.
    #[arg(long, value_name = "REAL")]
    pub lambda: f64,
    /// Scaling-list output; telemetry and manifest are written next to it.
    #[arg(long, default_value = "scaling_list.txt", value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepPreset {
    /// c in {4,16,64} and lambda in {0.01,0.1,1,10}.
    Grid3x4,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub opts: TrainOptions,
    /// Comma-separated noise strengths.
    #[arg(long = "c", value_name = "LIST", required_unless_present = "preset", conflicts_with = "preset")]
    pub c: Option<String>,
    /// Comma-separated rate-loss weights.
    #[arg(long, value_name = "LIST", required_unless_present = "preset", conflicts_with = "preset")]
    pub lambda: Option<String>,
    /// Named (c, lambda) grid instead of --c/--lambda.
    #[arg(long, value_enum)]
    pub preset: Option<SweepPreset>,
    /// Output directory for per-cell lists, heat maps and telemetry.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Image to encode.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Scaling-list file.
    #[arg(long, value_name = "FILE")]
    pub list: PathBuf,
    #[arg(long)]
    pub qp: i32,
    /// Coding block size: 4, 8, 16 or 32.
    #[arg(long, default_value_t = 8)]
    pub block_size: usize,
    /// Proxy used for the task-quality figure.
    #[arg(long, default_value = "lowfreq-mse")]
    pub proxy: String,
    /// Reconstruction output (PPM, rounded to 8 bits).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of .ppm/.pgm evaluation images.
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Comma-separated ascending QPs (at least four).
    #[arg(long, default_value = "12,17,22,27", value_name = "LIST")]
    pub qps: String,
    /// Comma-separated `name=FILE` scaling lists.
    #[arg(long, value_name = "LIST")]
    pub lists: String,
    /// Name of the anchor list.
    #[arg(long, value_name = "NAME")]
    pub anchor: String,
    /// Built-in proxy used for the task-quality axis.
    #[arg(long, default_value = "lowfreq-mse")]
    pub proxy: String,
    /// Coding block size: 4, 8, 16 or 32.
    #[arg(long, default_value_t = 8)]
    pub block_size: usize,
    /// Output directory for RD curves and the BD report.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Psnr,
    TaskQuality,
    Both,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// RD curve CSV of the tested list.
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// RD curve CSV of the anchor list.
    #[arg(long, value_name = "FILE")]
    pub anchor: PathBuf,
    #[arg(long, value_enum, default_value_t = AxisArg::Both)]
    pub axis: AxisArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportStyle {
    Native,
    Vtm,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Comma-separated `size<B>=FILE` for every size 2..64.
    #[arg(long, value_name = "LIST")]
    pub matrices: String,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportStyle::Native)]
    pub style: ExportStyle,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Width and height in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeProxyArgs {
    /// Reference image the requests are compared against.
    #[arg(long, value_name = "FILE")]
    pub reference: PathBuf,
    #[arg(long, default_value = "lowfreq-mse")]
    pub proxy: String,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
}

/// Error carrying the process exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<freqscale::Error> for Failure {
    fn from(e: freqscale::Error) -> Self {
        Self {
            code: if e.is_config() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("freqscale: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure thread pool: {e}")))?;
    }
    commands::dispatch(cli.command)
}
