use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adma::harness::{self, DatasetSpec, ModelSpec, TrainConfig, MNIST_SUBSET_DIR};
use adma::losses::{LossFunction, ProbabilityGrid, DEFAULT_EPSILON};
use adma::nn::checkpoint::write_checkpoint;
use adma::nn::Activation;
use adma::optim::OptimizerKind;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adma", version, about = "Train and analyse networks under the Adma loss and its baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration; writes metrics.csv, report.json, timings.csv and model.ckpt.
    Train(Common),
    /// Train the same configuration under several losses.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Losses to compare, e.g. `adma(0.26),cce,mse,squared_hinge`.
        #[arg(long, value_delimiter = ',')]
        losses: Vec<String>,
    },
    /// Train Adma at each `--a` value and report the best one.
    SweepA(Common),
    /// Finite-difference check of backprop through the stock architectures.
    Gradcheck(Common),
    /// Write curves.csv with Adma and baseline loss values over a probability grid.
    Curves {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1001)]
        points: usize,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Probe convexity of the Adma curve for each `--a` value.
    Convexity {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1024)]
        points: usize,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML or JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// `blobs`, `mnist-subset`, or a directory holding `*images-idx3-ubyte*` and `*labels-idx1-ubyte*`.
    #[arg(long)]
    dataset: Option<String>,
    /// Keep only the first N samples of an IDX dataset.
    #[arg(long)]
    limit: Option<usize>,
    /// `cce`, `mse`, `squared_hinge`, `adma` or `adma(0.26)`.
    #[arg(long)]
    loss: Option<String>,
    /// Adma scaling factor(s), comma separated where a list is accepted.
    #[arg(long, value_delimiter = ',')]
    a: Vec<f64>,
    /// `logistic`, `mlp:256,128` or `convnet:8`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    /// `adam`, `sgd`, `momentum` or `nesterov` (momentum 0.9).
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Train fraction of the train/validation split.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    repetitions: Option<usize>,
}

fn parse_dataset(text: &str) -> Result<DatasetSpec> {
    Ok(match text {
        "blobs" => DatasetSpec::blobs(3, 2, 100, 0.05),
        "mnist-subset" | "mnist" => DatasetSpec::idx_dir(MNIST_SUBSET_DIR)?,
        dir => DatasetSpec::idx_dir(dir)?,
    })
}

fn parse_model(text: &str, activation: Activation, dropout: f64) -> Result<ModelSpec> {
    let (kind, arg) = text.split_once(':').unwrap_or((text, ""));
    Ok(match kind {
        "logistic" => ModelSpec::logistic(),
        "mlp" => ModelSpec::Mlp {
            hidden: arg
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("bad hidden widths in `{text}`"))?,
            activation,
            dropout,
        },
        "convnet" => ModelSpec::Convnet {
            base_channels: if arg.is_empty() { 8 } else { arg.parse().context("bad convnet width")? },
            dense_width: None,
            dropout,
            activation,
        },
        other => bail!("unknown model `{other}` (expected logistic, mlp:<widths> or convnet:<channels>)"),
    })
}

fn parse_optimizer(text: &str) -> Result<OptimizerKind> {
    Ok(match text {
        "adam" => OptimizerKind::adam(),
        "sgd" => OptimizerKind::sgd(),
        "momentum" => OptimizerKind::Sgd {
            momentum: 0.9,
            nesterov: false,
        },
        "nesterov" => OptimizerKind::Sgd {
            momentum: 0.9,
            nesterov: true,
        },
        other => bail!("unknown optimizer `{other}`"),
    })
}

fn single_a(common: &Common) -> Result<Option<f64>> {
    match common.a.as_slice() {
        [] => Ok(None),
        [a] => Ok(Some(*a)),
        more => bail!("this command takes one --a value, got {}", more.len()),
    }
}

fn parse_loss(text: &str, a: Option<f64>) -> Result<LossFunction> {
    if text == "adma" {
        return Ok(LossFunction::adma(a.unwrap_or(0.26))?);
    }
    Ok(text.parse::<LossFunction>()?)
}

/// The run configuration: the `--config` file (or the blobs default) with
/// every given flag applied on top.
fn build_config(common: &Common, a: Option<f64>) -> Result<TrainConfig> {
    let mut c = match &common.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::blobs_default(),
    };
    if let Some(d) = &common.dataset {
        c.dataset = parse_dataset(d)?;
    }
    if let (Some(n), DatasetSpec::Idx { limit, .. }) = (common.limit, &mut c.dataset) {
        *limit = Some(n);
    }
    if common.model.is_some() || common.activation.is_some() || common.dropout.is_some() {
        let activation = match &common.activation {
            Some(s) => s.parse()?,
            None => Activation::elu(),
        };
        let model = common.model.as_deref().unwrap_or("mlp:256");
        c.model = parse_model(model, activation, common.dropout.unwrap_or(0.0))?;
    }
    let epsilon = c.loss.epsilon;
    match (&common.loss, a) {
        (Some(l), a) => c.loss = parse_loss(l, a)?.with_epsilon(epsilon)?,
        (None, Some(a)) => c.loss = LossFunction::adma(a)?.with_epsilon(epsilon)?,
        (None, None) => {}
    }
    if let Some(o) = &common.optimizer {
        c.optimizer = parse_optimizer(o)?;
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = common.$field {
                c.$field = v;
            }
        )*};
    }
    set!(seed, lr, epochs, batch_size, weight_decay, split, repetitions);
    c.validate()?;
    Ok(c)
}

fn run_train(common: &Common) -> Result<()> {
    let config = build_config(common, single_a(common)?)?;
    let (report, model, _, _) = harness::train_model(&config)?;
    report.write(&common.out_dir)?;
    let ckpt = common.out_dir.join("model.ckpt");
    let file = File::create(&ckpt).with_context(|| format!("creating {}", ckpt.display()))?;
    write_checkpoint(&model, BufWriter::new(file))?;
    let s = &report.summary;
    println!(
        "{} on {} train / {} val: final val acc {:.4}, best {:.4}, first epoch {}",
        report.loss,
        report.train_size,
        report.val_size,
        s.final_val_acc,
        s.best_val_acc,
        s.first_epoch_val_acc.map_or("-".into(), |v| format!("{v:.4}"))
    );
    for flag in &report.flags {
        println!("flag: {flag}");
    }
    println!("wrote {}", common.out_dir.display());
    Ok(())
}

fn run_compare(common: &Common, losses: &[String]) -> Result<()> {
    let a = single_a(common)?;
    let config = build_config(common, a)?;
    let names: Vec<String> = if losses.is_empty() {
        ["adma", "cce", "mse", "squared_hinge"].map(String::from).to_vec()
    } else {
        losses.to_vec()
    };
    let losses = names
        .iter()
        .map(|l| Ok(parse_loss(l.trim(), a)?.with_epsilon(config.loss.epsilon)?))
        .collect::<Result<Vec<_>>>()?;
    let cmp = harness::compare(&config, &losses)?;
    cmp.write(&common.out_dir)?;
    print!("{}", cmp.table());
    Ok(())
}

const DEFAULT_A_VALUES: [f64; 6] = [0.05, 0.1, 0.2, 0.26, 0.35, 0.5];

fn a_values(common: &Common, default: &[f64]) -> Vec<f64> {
    if common.a.is_empty() {
        default.to_vec()
    } else {
        common.a.clone()
    }
}

fn run_sweep(common: &Common) -> Result<()> {
    let config = build_config(common, None)?;
    let sweep = harness::sweep_a(&config, &a_values(common, &DEFAULT_A_VALUES))?;
    sweep.write(&common.out_dir)?;
    print!("{}", sweep.table());
    Ok(())
}

fn run_gradcheck(common: &Common) -> Result<bool> {
    let report = harness::gradcheck(common.seed.unwrap_or(0), common.batch_size.unwrap_or(4))?;
    report.write(&common.out_dir)?;
    print!("{}", report.table());
    Ok(report.passed())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run_curves(common: &Common, points: usize, epsilon: f64) -> Result<()> {
    ensure_dir(&common.out_dir)?;
    let grid = ProbabilityGrid::new(epsilon, 1.0, points)?;
    let path = common.out_dir.join("curves.csv");
    let summary = harness::emit_curves(&a_values(common, &DEFAULT_A_VALUES), &grid, epsilon, &path)?;
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(common.out_dir.join("curves.json"), json + "\n")?;
    println!("wrote {} ({} rows: {})", path.display(), summary.rows, summary.columns.join(", "));
    println!(
        "closest to normalized cross-entropy: a = {} (max deviation {:.4})",
        summary.best_cce_a, summary.best_cce_deviation
    );
    Ok(())
}

fn run_convexity(common: &Common, points: usize) -> Result<()> {
    ensure_dir(&common.out_dir)?;
    let grid = ProbabilityGrid::new(0.01, 1.0, points)?;
    let defaults: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let path = common.out_dir.join("convexity.csv");
    let reports = harness::probe_convexity_table(&a_values(common, &defaults), &grid, &path)?;
    println!("{:>6} {:>8} {:>16}", "a", "convex", "first_violation");
    for r in &reports {
        println!(
            "{:>6} {:>8} {:>16}",
            r.a,
            r.is_convex,
            r.first_violation.map_or("-".into(), |p| format!("{p:.4}"))
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(c) => run_train(c).map(|_| true),
        Command::Compare { common, losses } => run_compare(common, losses).map(|_| true),
        Command::SweepA(c) => run_sweep(c).map(|_| true),
        Command::Gradcheck(c) => run_gradcheck(c),
        Command::Curves {
            common,
            points,
            epsilon,
        } => run_curves(common, *points, *epsilon).map(|_| true),
        Command::Convexity { common, points } => run_convexity(common, *points).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("gradient check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
