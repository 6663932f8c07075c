//! Experiment configuration: defaults, `key = value` files and flag overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use snn_core::lif::{LifConfig, Surrogate};
use snn_core::train::{LossKind, OptimizerKind, TrainSchedule};

pub const DATA_DIR_ENV: &str = "SNN_DATA_DIR";

/// Every key accepted in config files, in snapshot order.
pub const KEYS: &[&str] = &[
    "arch",
    "channels",
    "width_scale",
    "seq",
    "window",
    "alpha",
    "threshold",
    "beta",
    "resting",
    "surrogate",
    "surrogate_width",
    "continuous_relu",
    "dropout",
    "pretrain_epochs",
    "epochs",
    "lr",
    "batch_size",
    "optimizer",
    "loss",
    "seed",
    "train_samples",
    "test_samples",
    "events_per_frame",
    "precision",
    "data_dir",
    "out_dir",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    ConvSnn,
    StsResNet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqChoice {
    /// 0 is static MNIST, 1..=5 the synthetic sequences.
    Synthetic(u8),
    Nmnist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub arch: Arch,
    pub channels: (usize, usize),
    pub width_scale: f64,
    pub seq: SeqChoice,
    pub window: usize,
    pub lif: LifConfig,
    pub dropout: f64,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub seed: u64,
    /// `None` keeps the whole split.
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
    pub events_per_frame: usize,
    pub precision: Precision,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            pretrain_epochs: self.pretrain_epochs,
            total_epochs: self.epochs,
            lr: self.lr,
            optimizer: self.optimizer,
            loss: self.loss,
            batch_size: self.batch_size,
            seed: self.seed,
            lif: self.lif,
            target_test_acc: None,
        }
    }

    /// Canonical snapshot with every field materialised.
    pub fn to_snapshot(&self) -> String {
        let opt = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_else(|| "all".into());
        let pairs: Vec<(&str, String)> = vec![
            (
                "arch",
                match self.arch {
                    Arch::ConvSnn => "convsnn".into(),
                    Arch::StsResNet => "sts-resnet".into(),
                },
            ),
            ("channels", format!("{}-{}", self.channels.0, self.channels.1)),
            ("width_scale", self.width_scale.to_string()),
            (
                "seq",
                match self.seq {
                    SeqChoice::Synthetic(s) => s.to_string(),
                    SeqChoice::Nmnist => "nmnist".into(),
                },
            ),
            ("window", self.window.to_string()),
            ("alpha", self.lif.alpha.to_string()),
            ("threshold", self.lif.threshold.to_string()),
            ("beta", self.lif.beta.to_string()),
            ("resting", self.lif.resting.to_string()),
            ("surrogate", self.lif.surrogate.to_string()),
            ("surrogate_width", self.lif.surrogate_width.to_string()),
            ("continuous_relu", self.lif.continuous_relu.to_string()),
            ("dropout", self.dropout.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("loss", self.loss.to_string()),
            ("seed", self.seed.to_string()),
            ("train_samples", opt(self.train_samples)),
            ("test_samples", opt(self.test_samples)),
            ("events_per_frame", self.events_per_frame.to_string()),
            (
                "precision",
                match self.precision {
                    Precision::F32 => "f32".into(),
                    Precision::F64 => "f64".into(),
                },
            ),
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        debug_assert_eq!(pairs.len(), KEYS.len());
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str, origin: &str) -> anyhow::Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut problems = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            problems.push(format!("{origin}:{}: expected `key = value`", n + 1));
            continue;
        };
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            problems.push(format!("{origin}:{}: unknown key `{}`", n + 1, k.trim()));
            continue;
        }
        map.insert(key, v.trim().to_string());
    }
    if !problems.is_empty() {
        bail!("invalid config file:\n  {}", problems.join("\n  "));
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_kv(&text, &path.display().to_string())
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_channels(v: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = v.split(['-', ',', 'x']).map(str::trim).collect();
    match parts[..] {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(format!("expected two channel counts like 48-48, got `{v}`")),
        },
        _ => Err(format!("expected two channel counts like 48-48, got `{v}`")),
    }
}

fn parse_count(v: &str) -> Result<Option<usize>, String> {
    if v.eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    v.parse().map(Some).map_err(|_| format!("expected a count or `all`, got `{v}`"))
}

/// Resolves raw settings into a full config; all problems are reported at once.
pub fn resolve(raw: &BTreeMap<String, String>) -> anyhow::Result<ExperimentConfig> {
    let mut problems: Vec<String> = Vec::new();
    let get = |key: &str| raw.get(key).map(String::as_str);
    macro_rules! field {
        ($key:literal, $default:expr, $parse:expr) => {{
            match get($key) {
                None => $default,
                Some(v) => match $parse(v) {
                    Ok(x) => x,
                    Err(e) => {
                        problems.push(format!("{}: {}", $key, e));
                        $default
                    }
                },
            }
        }};
    }
    let num = |v: &str| v.parse::<f64>().map_err(|_| format!("expected a number, got `{v}`"));
    let int = |v: &str| v.parse::<usize>().map_err(|_| format!("expected a non-negative integer, got `{v}`"));

    let arch = field!("arch", Arch::ConvSnn, |v: &str| match v.to_ascii_lowercase().as_str() {
        "convsnn" => Ok(Arch::ConvSnn),
        "sts-resnet" | "sts_resnet" | "stsresnet" => Ok(Arch::StsResNet),
        _ => Err(format!("unknown architecture `{v}` (convsnn, sts-resnet)")),
    });
    let seq = field!("seq", SeqChoice::Synthetic(0), |v: &str| match v.to_ascii_lowercase().as_str() {
        "nmnist" => Ok(SeqChoice::Nmnist),
        s => match s.parse::<u8>() {
            Ok(n) if n <= 5 => Ok(SeqChoice::Synthetic(n)),
            _ => Err(format!("expected 0..5 or nmnist, got `{v}`")),
        },
    });
    let conv = arch == Arch::ConvSnn;
    let default_alpha = if seq == SeqChoice::Nmnist { 0.8 } else { 0.5 };
    let defaults = LifConfig::default();
    let lif = LifConfig {
        alpha: field!("alpha", default_alpha, num),
        threshold: field!("threshold", defaults.threshold, num),
        beta: field!("beta", defaults.beta, num),
        resting: field!("resting", false, parse_bool),
        surrogate: field!("surrogate", Surrogate::Gaussian, |v: &str| v
            .parse::<Surrogate>()
            .map_err(|e| e.to_string())),
        surrogate_width: field!("surrogate_width", defaults.surrogate_width, num),
        continuous_relu: field!("continuous_relu", false, parse_bool),
    };
    if let Err(e) = lif.validate() {
        problems.push(e.to_string());
    }
    let cfg = ExperimentConfig {
        arch,
        channels: field!("channels", (48, 48), parse_channels),
        width_scale: field!("width_scale", 1.0, num),
        seq,
        window: field!("window", 10, int),
        lif,
        dropout: field!("dropout", snn_core::models::DEFAULT_BLOCK_DROPOUT, num),
        pretrain_epochs: field!("pretrain_epochs", 5, int),
        epochs: field!("epochs", 50, int),
        lr: field!("lr", 5e-4, num),
        batch_size: field!("batch_size", if conv { 20 } else { 10 }, int),
        optimizer: field!(
            "optimizer",
            if conv { OptimizerKind::Adam } else { OptimizerKind::SgdMomentum },
            |v: &str| v.parse::<OptimizerKind>().map_err(|e| e.to_string())
        ),
        loss: field!("loss", if conv { LossKind::Mse } else { LossKind::Bce }, |v: &str| v
            .parse::<LossKind>()
            .map_err(|e| e.to_string())),
        seed: field!("seed", 0, |v: &str| v
            .parse::<u64>()
            .map_err(|_| format!("expected an unsigned integer, got `{v}`"))),
        train_samples: field!("train_samples", None, parse_count),
        test_samples: field!("test_samples", None, parse_count),
        events_per_frame: field!("events_per_frame", snn_core::data::DEFAULT_EVENTS_PER_FRAME, int),
        precision: field!("precision", Precision::F32, |v: &str| match v {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(format!("expected f32 or f64, got `{v}`")),
        }),
        data_dir: field!(
            "data_dir",
            std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data")),
            |v: &str| Ok::<_, String>(PathBuf::from(v))
        ),
        out_dir: field!("out_dir", PathBuf::from("runs"), |v: &str| Ok::<_, String>(PathBuf::from(v))),
    };
    problems.extend(cfg.schedule().problems());
    if cfg.window == 0 {
        problems.push("window must be at least 1".into());
    }
    if cfg.channels.0 == 0 || cfg.channels.1 == 0 {
        problems.push("channels must be positive".into());
    }
    if !(cfg.width_scale > 0.0) {
        problems.push(format!("width_scale {} must be > 0", cfg.width_scale));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        problems.push(format!("dropout {} outside [0,1)", cfg.dropout));
    }
    if cfg.events_per_frame == 0 {
        problems.push("events_per_frame must be at least 1".into());
    }
    if !problems.is_empty() {
        bail!("invalid configuration:\n  {}", problems.join("\n  "));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_by_arch() {
        let conv = resolve(&BTreeMap::new()).unwrap();
        assert_eq!((conv.batch_size, conv.optimizer, conv.loss), (20, OptimizerKind::Adam, LossKind::Mse));
        assert_eq!(conv.lif.alpha, 0.5);
        assert_eq!(conv.window, 10);

        let mut raw = BTreeMap::new();
        raw.insert("arch".into(), "sts-resnet".into());
        raw.insert("seq".into(), "nmnist".into());
        let sts = resolve(&raw).unwrap();
        assert_eq!((sts.batch_size, sts.optimizer, sts.loss), (10, OptimizerKind::SgdMomentum, LossKind::Bce));
        assert_eq!(sts.lif.alpha, 0.8);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut raw = BTreeMap::new();
        raw.insert("channels".into(), "16-16".into());
        raw.insert("train_samples".into(), "100".into());
        raw.insert("data_dir".into(), "/tmp/x".into());
        let cfg = resolve(&raw).unwrap();
        let again = resolve(&parse_kv(&cfg.to_snapshot(), "snapshot").unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn reports_all_problems() {
        let raw = parse_kv("lr = -1\nwindow = x\nalpha = 2\n", "t").unwrap();
        let msg = resolve(&raw).unwrap_err().to_string();
        assert!(msg.contains("lr") && msg.contains("window") && msg.contains("alpha"), "{msg}");
        assert!(parse_kv("colour = red", "t").is_err());
    }
}
