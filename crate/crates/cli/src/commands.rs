//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use snn_core::data::{
    self, list_nmnist, load_mnist_split, split_seed, CacheHeader, CacheWriter, Dataset, NmnistFiles, Split,
    Synthetic, NMNIST_SEQ_ID, NMNIST_SIDE,
};
use snn_core::models::{
    build_convsnn, build_sts_resnet, count_ops, dump_feature_maps, load_checkpoint, save_checkpoint, DumpFormat,
    Network, NetworkSpec, Phase,
};
use snn_core::train::{confusion_csv, evaluate, firing_rates_csv, metrics_csv, train, EpochMetrics};
use snn_core::Scalar;

use crate::config::{Arch, ExperimentConfig, Precision, SeqChoice};

/// Side length NMNIST frames are padded to so every pooling stage divides.
fn nmnist_side(arch: Arch) -> usize {
    let step = match arch {
        Arch::ConvSnn => 4,
        Arch::StsResNet => 8,
    };
    NMNIST_SIDE.div_ceil(step) * step
}

pub fn num_classes(cfg: &ExperimentConfig) -> usize {
    match cfg.seq {
        SeqChoice::Synthetic(s) => data::num_classes(s).expect("validated sequence id"),
        SeqChoice::Nmnist => 10,
    }
}

pub fn input_shape(cfg: &ExperimentConfig) -> Vec<usize> {
    match cfg.seq {
        SeqChoice::Synthetic(_) => vec![1, data::SIDE, data::SIDE],
        SeqChoice::Nmnist => {
            let side = nmnist_side(cfg.arch);
            vec![2, side, side]
        }
    }
}

pub fn build_spec(cfg: &ExperimentConfig) -> anyhow::Result<NetworkSpec> {
    let shape = input_shape(cfg);
    let classes = num_classes(cfg);
    let mut spec = match cfg.arch {
        Arch::ConvSnn => build_convsnn(cfg.channels, &shape, classes)?,
        Arch::StsResNet => build_sts_resnet(cfg.width_scale, &shape, classes)?,
    };
    spec.window = cfg.window;
    spec.set_lif(cfg.lif);
    spec.set_dropout(cfg.dropout);
    spec.infer_shapes()?;
    Ok(spec)
}

pub fn dataset(cfg: &ExperimentConfig, split: Split) -> anyhow::Result<Box<dyn Dataset>> {
    let limit = match split {
        Split::Train => cfg.train_samples,
        Split::Test => cfg.test_samples,
    };
    match cfg.seq {
        SeqChoice::Synthetic(seq) => {
            let images = load_mnist_split(&cfg.data_dir, split)
                .with_context(|| format!("loading MNIST {} split from {}", split.as_str(), cfg.data_dir.display()))?;
            let set = Synthetic::new(seq, images, split_seed(cfg.seed, split), cfg.window)?;
            Ok(Box::new(match limit {
                Some(n) => set.limit(n),
                None => set,
            }))
        }
        SeqChoice::Nmnist => {
            let mut files = list_nmnist(&cfg.data_dir, split == Split::Train)
                .with_context(|| format!("listing NMNIST recordings under {}", cfg.data_dir.display()))?;
            if let Some(n) = limit {
                files.truncate(n);
            }
            Ok(Box::new(NmnistFiles {
                files,
                events_per_frame: cfg.events_per_frame,
                window: cfg.window,
                pad_to: Some(nmnist_side(cfg.arch)),
            }))
        }
    }
}

fn create_out_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
    bytes: u64,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

pub struct CacheSummary {
    pub path: PathBuf,
    pub count: usize,
    pub num_classes: usize,
    pub sha256: String,
}

/// Streams one split into an `SSEQ1` cache and returns its checksum.
pub fn write_cache(cfg: &ExperimentConfig, split: Split) -> anyhow::Result<CacheSummary> {
    let set = dataset(cfg, split)?;
    let shape = set.frame_shape();
    let seq_id = match cfg.seq {
        SeqChoice::Synthetic(s) => s,
        SeqChoice::Nmnist => NMNIST_SEQ_ID,
    };
    let header = CacheHeader {
        seq_id,
        num_classes: set.num_classes() as u8,
        count: set.len() as u32,
        window: shape[0] as u32,
        channels: shape[1] as u32,
        height: shape[2] as u32,
        width: shape[3] as u32,
    };
    create_out_dir(&cfg.out_dir)?;
    let name = match cfg.seq {
        SeqChoice::Synthetic(s) => format!("seq{s}_{}.sseq", split.as_str()),
        SeqChoice::Nmnist => format!("nmnist_{}.sseq", split.as_str()),
    };
    let path = cfg.out_dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let sink = HashingWriter {
        inner: BufWriter::new(file),
        hasher: Sha256::new(),
        bytes: 0,
    };
    let mut writer = CacheWriter::new(sink, header)?;
    const CHUNK: usize = 512;
    for start in (0..set.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(set.len());
        let samples: Vec<_> = (start..end).into_par_iter().map(|i| set.sample(i)).collect();
        for s in samples {
            writer.push(&s?)?;
        }
    }
    let sink = writer.finish()?;
    log::debug!("{} bytes written", sink.bytes);
    Ok(CacheSummary {
        path,
        count: set.len(),
        num_classes: set.num_classes(),
        sha256: format!("{:x}", sink.hasher.finalize()),
    })
}

pub fn gen_data(cfg: &ExperimentConfig, splits: &[Split]) -> anyhow::Result<()> {
    for &split in splits {
        let s = write_cache(cfg, split)?;
        println!(
            "{}: {} samples, {} classes, sha256 {}",
            s.path.display(),
            s.count,
            s.num_classes,
            s.sha256
        );
    }
    Ok(())
}

fn epoch_line(m: &EpochMetrics) -> String {
    format!(
        "epoch {:>3} {:<8} loss {:.5} train {:.4} test {:.4}",
        m.epoch,
        m.phase.as_str(),
        m.loss,
        m.train_acc,
        m.test_acc
    )
}

fn train_typed<T: Scalar>(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let spec = build_spec(cfg)?;
    let train_set = dataset(cfg, Split::Train)?;
    let test_set = dataset(cfg, Split::Test)?;
    create_out_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("config.txt"), &cfg.to_snapshot())?;
    println!(
        "training on {} samples, testing on {}, {} classes",
        train_set.len(),
        test_set.len(),
        train_set.num_classes()
    );
    let mut net = Network::<T>::new(spec, cfg.seed)?;
    let metrics_path = cfg.out_dir.join("metrics.csv");
    let mut history = Vec::new();
    let outcome = train(&mut net, train_set.as_ref(), test_set.as_ref(), &cfg.schedule(), |m| {
        println!("{}", epoch_line(m));
        history.push(m.clone());
        if let Err(e) = std::fs::write(&metrics_path, metrics_csv(&history)) {
            log::warn!("could not update {}: {e}", metrics_path.display());
        }
    })?;
    write_file(&metrics_path, &metrics_csv(&outcome.history))?;
    let best = Network::from_params(net.spec().clone(), outcome.best_params.clone())?;
    save_checkpoint(&cfg.out_dir.join("best.snnw"), &best)?;
    write_file(&cfg.out_dir.join("confusion.csv"), &confusion_csv(&outcome.best_eval.confusion))?;
    write_file(
        &cfg.out_dir.join("firing_rates.csv"),
        &firing_rates_csv(&best, &outcome.best_eval.firing_rates),
    )?;
    println!(
        "best test accuracy {:.6} at epoch {}",
        outcome.best_test_acc(),
        outcome.best_epoch
    );
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}

/// Phase used to score a checkpoint: spiking unless the schedule never spikes.
fn eval_phase(cfg: &ExperimentConfig) -> Phase {
    if cfg.pretrain_epochs >= cfg.epochs {
        Phase::Analog
    } else {
        Phase::Spiking
    }
}

fn load_net<T: Scalar>(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> anyhow::Result<Network<T>> {
    let spec = build_spec(cfg)?;
    match checkpoint {
        Some(path) => load_checkpoint(path, spec).with_context(|| format!("loading checkpoint {}", path.display())),
        None => Ok(Network::new(spec, cfg.seed)?),
    }
}

fn eval_typed<T: Scalar>(cfg: &ExperimentConfig, checkpoint: &Path) -> anyhow::Result<()> {
    let net = load_net::<T>(cfg, Some(checkpoint))?;
    let test_set = dataset(cfg, Split::Test)?;
    let result = evaluate(&net, test_set.as_ref(), eval_phase(cfg))?;
    create_out_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("eval_confusion.csv"), &confusion_csv(&result.confusion))?;
    write_file(
        &cfg.out_dir.join("eval_firing_rates.csv"),
        &firing_rates_csv(&net, &result.firing_rates),
    )?;
    println!("top1 {:.6} on {} samples", result.top1, test_set.len());
    Ok(())
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> anyhow::Result<()> {
    match cfg.precision {
        Precision::F32 => eval_typed::<f32>(cfg, checkpoint),
        Precision::F64 => eval_typed::<f64>(cfg, checkpoint),
    }
}

pub fn cmd_count_ops(cfg: &ExperimentConfig, checkpoint: Option<&Path>, rate_samples: usize) -> anyhow::Result<()> {
    let spec = build_spec(cfg)?;
    let rates = match checkpoint {
        Some(path) => {
            let net = load_net::<f32>(cfg, Some(path))?;
            let mut sub = cfg.clone();
            sub.test_samples = Some(cfg.test_samples.unwrap_or(usize::MAX).min(rate_samples));
            let test_set = dataset(&sub, Split::Test)?;
            Some(evaluate(&net, test_set.as_ref(), Phase::Spiking)?.input_rates)
        }
        None => None,
    };
    let report = count_ops(&spec, rates.as_deref())?;
    print!("{}", report.to_csv());
    println!("dense MOps per window: {:.3}", report.dense_macs as f64 / 1e6);
    if let Some(a) = report.spike_accs {
        println!("spike-driven MOps per window: {:.3}", a / 1e6);
    }
    Ok(())
}

pub struct DumpRequest<'a> {
    pub checkpoint: Option<&'a Path>,
    pub layer: usize,
    pub sample: usize,
    pub format: DumpFormat,
    pub phase: Phase,
}

pub fn cmd_dump_features(cfg: &ExperimentConfig, req: &DumpRequest) -> anyhow::Result<()> {
    let net = load_net::<f32>(cfg, req.checkpoint)?;
    let test_set = dataset(cfg, Split::Test)?;
    if req.sample >= test_set.len() {
        bail!("sample {} out of range ({} test samples)", req.sample, test_set.len());
    }
    let sample = test_set.sample(req.sample)?;
    let dir = cfg.out_dir.join("features");
    let files = dump_feature_maps(&net, &sample.frames, req.layer, req.phase, &dir, req.format)?;
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}
