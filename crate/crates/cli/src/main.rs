//! `pasc`: convert QCFS networks to spiking networks, certify equivalence,
//! analyze layer statistics and report energy.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pasc_core::energy::Precision;

#[derive(Parser)]
#[command(name = "pasc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a weighted QCFS network into a spiking bundle.
    Convert {
        #[command(flatten)]
        model: ModelArgs,
        /// Output directory for the bundle.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both networks on the same inputs and compare them layer by layer.
    CheckEquiv {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        inputs: InputArgs,
        /// Largest accepted relative deviation at any layer boundary.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer agreement, skewness, kurtosis and composite metric, plus
    /// clustering into a layerwise L vector.
    AlMetric {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        inputs: InputArgs,
        /// Agreement threshold; defaults to 1/(2·MatMul layers).
        #[arg(long)]
        alpha: Option<f64>,
        /// Number of clusters.
        #[arg(long, default_value_t = 2)]
        chi: usize,
        /// L per cluster, lowest metric first; defaults to halving the
        /// largest L in the manifest.
        #[arg(long, value_delimiter = ',')]
        cluster_levels: Option<Vec<u32>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Operation counts, effective timesteps and energy ratios.
    Energy {
        /// Model manifest; alternative to `--arch`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Reference architecture: vgg16-cifar10, vgg16-cifar100,
        /// vgg16-imagenet, resnet18-cifar10, resnet18-cifar100,
        /// resnet34-imagenet.
        #[arg(long)]
        arch: Option<String>,
        /// One L for every layer, or one per IF layer.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u32>>,
        #[command(flatten)]
        inputs: InputArgs,
        /// `measured`, or a fixed rate such as `0.75`.
        #[arg(long, default_value = "0.75")]
        rate: String,
        #[arg(long, value_enum, default_value_t = PrecisionArg::Fp32)]
        precision: PrecisionArg,
        /// Print a published op-count table: vgg16-cifar, vgg16-imagenet,
        /// resnet18-cifar.
        #[arg(long)]
        golden: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<layer_id>.f32` blobs.
    #[arg(long, conflicts_with = "seed")]
    weights: Option<PathBuf>,
    /// Seed for random weights and the random input batch.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Raw little-endian f32 file holding N×C×H×W inputs.
    #[arg(long, conflicts_with = "n")]
    inputs: Option<PathBuf>,
    /// Number of random inputs drawn uniform in [0, 1).
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Fp32,
    Int8,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Fp32 => Precision::Fp32,
            PrecisionArg::Int8 => Precision::Int8,
        }
    }
}

/// How a command ended when it did not fail outright.
enum Outcome {
    Success,
    CheckFailed,
}

/// The error chain joined by `: `, skipping causes already spelled out by
/// the message before them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.is_empty() {
            out = msg;
        } else if !out.ends_with(&msg) {
            out = format!("{out}: {msg}");
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
