use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use snn_core::data::Split;
use snn_core::models::{DumpFormat, Phase};

mod commands;
mod config;

use config::{read_config_file, resolve, ExperimentConfig, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "snn", version, about = "Spiking neural network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset split and cache it to disk.
    GenData(GenDataArgs),
    /// Train a network and write checkpoint, metrics and config snapshot.
    Train(ConfigArgs),
    /// Score a checkpoint on the test split.
    Eval(EvalArgs),
    /// Print analytic and spike-driven operation counts.
    CountOps(CountOpsArgs),
    /// Write per-step feature maps of one synapse layer.
    DumpFeatures(DumpArgs),
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// convsnn or sts-resnet
    #[arg(long)]
    arch: Option<String>,
    /// 0 (static MNIST), 1..5, or nmnist
    #[arg(long)]
    seq: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    pretrain_epochs: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// adam or sgd
    #[arg(long)]
    optimizer: Option<String>,
    /// mse or bce
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// gaussian or rect
    #[arg(long)]
    surrogate: Option<String>,
    #[arg(long)]
    surrogate_width: Option<String>,
    /// Enable the reset gate (optionally `--resting false`).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    resting: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    continuous_relu: Option<String>,
    #[arg(long)]
    width_scale: Option<String>,
    /// ConvSNN channels, e.g. 48-48
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    /// Number of training samples, or `all`
    #[arg(long)]
    train_samples: Option<String>,
    #[arg(long)]
    test_samples: Option<String>,
    #[arg(long)]
    events_per_frame: Option<String>,
    /// f32 or f64
    #[arg(long)]
    precision: Option<String>,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut raw = match &self.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        let flags = [
            ("arch", &self.arch),
            ("seq", &self.seq),
            ("window", &self.window),
            ("alpha", &self.alpha),
            ("threshold", &self.threshold),
            ("beta", &self.beta),
            ("pretrain_epochs", &self.pretrain_epochs),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("optimizer", &self.optimizer),
            ("loss", &self.loss),
            ("seed", &self.seed),
            ("surrogate", &self.surrogate),
            ("surrogate_width", &self.surrogate_width),
            ("resting", &self.resting),
            ("continuous_relu", &self.continuous_relu),
            ("width_scale", &self.width_scale),
            ("channels", &self.channels),
            ("dropout", &self.dropout),
            ("train_samples", &self.train_samples),
            ("test_samples", &self.test_samples),
            ("events_per_frame", &self.events_per_frame),
            ("precision", &self.precision),
            ("out_dir", &self.out_dir),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                raw.insert(key.to_string(), v.clone());
            }
        }
        // the environment only fills in a data dir the config file left open
        if let Some(v) = &self.data_dir {
            let from_env = std::env::var(DATA_DIR_ENV).ok().as_ref() == Some(v);
            if !(from_env && raw.contains_key("data_dir")) {
                raw.insert("data_dir".into(), v.clone());
            }
        }
        resolve(&raw)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Both,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct CountOpsArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Measure firing rates with these weights.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    rate_samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Pgm,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Pretrain,
    Spiking,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Weights to use; a freshly initialised network otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Synapse layer, 0 being the input synapse.
    #[arg(long, default_value_t = 1)]
    layer: usize,
    /// Index into the test split.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[arg(long, value_enum, default_value = "pgm")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "spiking")]
    phase: PhaseArg,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(args) => {
            let cfg = args.cfg.resolve()?;
            let splits: &[Split] = match args.split {
                SplitArg::Train => &[Split::Train],
                SplitArg::Test => &[Split::Test],
                SplitArg::Both => &[Split::Train, Split::Test],
            };
            commands::gen_data(&cfg, splits)
        }
        Command::Train(args) => commands::cmd_train(&args.resolve()?),
        Command::Eval(args) => commands::cmd_eval(&args.cfg.resolve()?, &args.checkpoint),
        Command::CountOps(args) => {
            commands::cmd_count_ops(&args.cfg.resolve()?, args.checkpoint.as_deref(), args.rate_samples)
        }
        Command::DumpFeatures(args) => {
            let cfg = args.cfg.resolve()?;
            let req = commands::DumpRequest {
                checkpoint: args.checkpoint.as_deref(),
                layer: args.layer,
                sample: args.sample,
                format: match args.format {
                    FormatArg::Pgm => DumpFormat::Pgm,
                    FormatArg::Csv => DumpFormat::Csv,
                },
                phase: match args.phase {
                    PhaseArg::Pretrain => Phase::Analog,
                    PhaseArg::Spiking => Phase::Spiking,
                },
            };
            commands::cmd_dump_features(&cfg, &req)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
