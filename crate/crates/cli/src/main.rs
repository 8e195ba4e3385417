//! Experiment CLI: train CNNs with dropout-aware pooling, sweep retaining
//! probabilities across test-time pooling schemes, and report per-layer
//! dropout model counts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use poolnet_core::arch::resolve_arch;
use poolnet_core::data::{
    load_cifar10, load_cifar100, load_mnist, preprocess_cifar, preprocess_mnist, Dataset,
};
use poolnet_core::experiment::{
    render_metrics_csv, render_model_count_csv, render_sweep_csv, report_model_count,
    run_training, sweep, write_csv, ExperimentConfig,
};
use poolnet_core::net::{PoolTestMode, PoolTrainMode};
use poolnet_core::RetainProb;

#[derive(Parser)]
#[command(name = "poolnet", about = "Pooling-method experiments for small CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and emit per-epoch metrics CSV.
    Train(TrainArgs),
    /// Train one model per retaining probability and compare test-time
    /// pooling schemes, plus a stochastic-pooling baseline.
    Sweep(SweepArgs),
    /// Report the per-pooling-layer count of dropout-realizable models.
    ModelCount(ModelCountArgs),
}

#[derive(Args)]
struct DataArgs {
    /// mnist, cifar10 or cifar100
    #[arg(long)]
    dataset: String,

    /// Directory holding the official dataset files
    #[arg(long)]
    data_dir: PathBuf,

    /// Use only the first N training examples (0 = all)
    #[arg(long, default_value_t = 0)]
    limit_train: usize,

    /// Use only the first N test examples (0 = all)
    #[arg(long, default_value_t = 0)]
    limit_test: usize,
}

#[derive(Args)]
struct CommonTrainArgs {
    /// Architecture preset (mnist/cifar10/cifar100) or raw string; defaults
    /// to the dataset's preset
    #[arg(long)]
    arch: Option<String>,

    /// Dropout on dense-layer inputs: a probability, or `off`
    #[arg(long, default_value = "off")]
    fc_dropout: String,

    /// Training epochs; defaults to 10 for MNIST, 15 for CIFAR
    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long, default_value_t = 100)]
    batch_size: usize,

    #[arg(long, default_value_t = 0.1)]
    lr: f64,

    #[arg(long, default_value_t = 0.95)]
    momentum: f64,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    common: CommonTrainArgs,

    /// max, max_dropout or stochastic
    #[arg(long, default_value = "max")]
    train_pool: String,

    /// max, scaled_max, prob_weighted or stochastic_weighted
    #[arg(long, default_value = "max")]
    test_pool: String,

    /// Retaining probability for dropout pooling modes
    #[arg(long)]
    p: Option<f64>,

    /// Allow non-standard train/test pooling pairings
    #[arg(long, default_value_t = false)]
    allow_cross_pairing: bool,

    /// Also dump the trained parameters here
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    common: CommonTrainArgs,

    /// Comma-separated retaining probabilities to train at
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    p_grid: String,
}

#[derive(Args)]
struct ModelCountArgs {
    /// Architecture preset or raw string
    #[arg(long)]
    arch: String,

    /// Optional CSV output path (stdout otherwise)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ModelCount(args) => cmd_model_count(args),
    }
}

fn default_epochs(dataset: &str) -> usize {
    match dataset {
        "mnist" => 10,
        _ => 15,
    }
}

fn parse_fc_dropout(s: &str) -> Result<Option<RetainProb>> {
    if s == "off" {
        return Ok(None);
    }
    let p: f64 = s.parse().context("--fc-dropout expects a number or `off`")?;
    Ok(Some(RetainProb::new(p)?))
}

fn load_datasets(args: &DataArgs) -> Result<(Dataset, Dataset)> {
    let dir = &args.data_dir;
    let (mut train, mut test) = match args.dataset.as_str() {
        "mnist" => {
            let train = load_mnist(
                &mnist_file(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?,
                &mnist_file(dir, &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?,
            )?;
            let test = load_mnist(
                &mnist_file(dir, &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])?,
                &mnist_file(dir, &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"])?,
            )?;
            (train, test)
        }
        "cifar10" => {
            let batches: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect();
            (load_cifar10(&batches)?, load_cifar10(&[dir.join("test_batch.bin")])?)
        }
        "cifar100" => (
            load_cifar100(&dir.join("train.bin"))?,
            load_cifar100(&dir.join("test.bin"))?,
        ),
        other => bail!("unknown dataset `{other}` (expected mnist, cifar10, cifar100)"),
    };

    if args.limit_train > 0 {
        train = train.take(args.limit_train)?;
    }
    if args.limit_test > 0 {
        test = test.take(args.limit_test)?;
    }

    match args.dataset.as_str() {
        "mnist" => {
            preprocess_mnist(&mut train)?;
            preprocess_mnist(&mut test)?;
        }
        _ => {
            let means = preprocess_cifar(&mut train, None)?;
            preprocess_cifar(&mut test, Some(&means))?;
        }
    }
    Ok((train, test))
}

fn mnist_file(dir: &Path, candidates: &[&str]) -> Result<PathBuf> {
    for name in candidates {
        let path = dir.join(name);
        if path.exists() {
            return Ok(path);
        }
    }
    bail!("none of {candidates:?} found under {}", dir.display())
}

fn build_config(data: &DataArgs, common: &CommonTrainArgs) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig {
        arch: common.arch.clone().unwrap_or_else(|| data.dataset.clone()),
        train_pool: PoolTrainMode::Max,
        test_pool: PoolTestMode::Max,
        p: None,
        fc_dropout: parse_fc_dropout(&common.fc_dropout)?,
        epochs: common.epochs.unwrap_or_else(|| default_epochs(&data.dataset)),
        batch_size: common.batch_size,
        learning_rate: common.lr,
        momentum: common.momentum,
        seed: common.seed,
        allow_cross_pairing: false,
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = build_config(&args.data, &args.common)?;
    config.train_pool = PoolTrainMode::parse(&args.train_pool)?;
    config.test_pool = PoolTestMode::parse(&args.test_pool)?;
    config.p = args.p.map(RetainProb::new).transpose()?;
    config.allow_cross_pairing = args.allow_cross_pairing;
    config.validate()?;

    let (train, test) = load_datasets(&args.data)?;
    let (records, net) = run_training(&config, &train, &test)?;
    write_csv(&args.common.out, &render_metrics_csv(&records))?;
    if let Some(model_out) = &args.model_out {
        net.save(model_out)?;
    }
    if let Some(last) = records.last() {
        println!(
            "trained {} epochs; final train loss {:.6}, test error {:.2}%",
            records.len(),
            last.train_loss,
            last.test_error_percent
        );
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let config = build_config(&args.data, &args.common)?;
    let p_values: Vec<f64> = args
        .p_grid
        .split(',')
        .map(|s| s.trim().parse::<f64>().context("bad value in --p-grid"))
        .collect::<Result<_>>()?;

    let (train, test) = load_datasets(&args.data)?;
    let rows = sweep(&config, &p_values, &train, &test)?;
    write_csv(&args.common.out, &render_sweep_csv(&rows))?;
    println!("sweep complete: {} rows -> {}", rows.len(), args.common.out.display());
    Ok(())
}

fn cmd_model_count(args: ModelCountArgs) -> Result<()> {
    let spec = resolve_arch(&args.arch)?;
    let csv = render_model_count_csv(&report_model_count(&spec)?);
    match &args.out {
        Some(path) => write_csv(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
