//! Hybrid training: analog pre-training epochs followed by surrogate-gradient
//! BPTT, plus evaluation and metric output.

mod gradcheck;
mod loss;
mod optim;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use gradcheck::{network_grad_check, NetworkGradCheck};
pub use loss::{loss_bce, loss_grad, loss_mse, loss_value, one_hot, record_rate_loss, LossKind, BCE_EPS};
pub use optim::{
    adam_step, sgd_momentum_step, AdamState, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, SGD_MOMENTUM,
};

use crate::data::Dataset;
use crate::error::{Result, SnnError};
use crate::lif::LifConfig;
use crate::models::{forward_window, ForwardOptions, Mode, Network, Phase};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    /// Number of leading analog epochs.
    pub pretrain_epochs: usize,
    pub total_epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub batch_size: usize,
    pub seed: u64,
    pub lif: LifConfig,
    /// Stop once the test accuracy reaches this value.
    pub target_test_acc: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            pretrain_epochs: 5,
            total_epochs: 50,
            lr: 5e-4,
            optimizer: OptimizerKind::Adam,
            loss: LossKind::Mse,
            batch_size: 20,
            seed: 0,
            lif: LifConfig::default(),
            target_test_acc: None,
        }
    }
}

impl TrainSchedule {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.pretrain_epochs > self.total_epochs {
            out.push(format!(
                "pretrain_epochs {} exceeds total epochs {}",
                self.pretrain_epochs, self.total_epochs
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            out.push(format!("lr {} must be > 0", self.lr));
        }
        if self.batch_size == 0 {
            out.push("batch_size must be at least 1".into());
        }
        if let Err(e) = self.lif.validate() {
            out.push(e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SnnError::param(problems.join("; ")))
        }
    }

    /// Phase of 1-based `epoch`.
    pub fn phase_of(&self, epoch: usize) -> Phase {
        if epoch <= self.pretrain_epochs {
            Phase::Analog
        } else {
            Phase::Spiking
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean training loss.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub top1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Mean output of each synapse layer.
    pub firing_rates: Vec<f64>,
    /// Mean input of each weighted layer, in parameter order.
    pub input_rates: Vec<f64>,
}

/// Winner-takes-all over spike counts, ties to the lowest class.
pub fn predict(counts: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Loss, parameter gradients and prediction for one sample.
pub struct SampleGradient<T: Scalar> {
    pub loss: f64,
    pub grads: Vec<Tensor<T>>,
    pub prediction: usize,
}

fn check_classes<T: Scalar>(net: &Network<T>, data: &dyn Dataset) -> Result<()> {
    if data.num_classes() != net.spec().num_classes {
        return Err(SnnError::contract(format!(
            "dataset has {} classes, network {}",
            data.num_classes(),
            net.spec().num_classes
        )));
    }
    Ok(())
}

pub fn sample_gradient<T: Scalar>(
    net: &Network<T>,
    frames: &Tensor<T>,
    label: usize,
    loss: LossKind,
    opts: ForwardOptions,
    rng: &mut ChaCha8Rng,
) -> Result<SampleGradient<T>> {
    let mut trace = forward_window(net, frames, opts, rng)?;
    let prediction = predict(&trace.spike_counts());
    let loss_node = record_rate_loss(&mut trace.tape, trace.output, label, loss)?;
    let value = trace.tape.value(loss_node).item()?.to_f64_lossy();
    if !value.is_finite() {
        let layer = trace
            .nodes
            .iter()
            .position(|&n| !trace.tape.value(n).all_finite())
            .map(|i| format!("node {i} ({})", net.spec().layers[i].kind.name()))
            .unwrap_or_else(|| "loss".into());
        return Err(SnnError::Divergence {
            epoch: 0,
            detail: format!("non-finite loss, first at {layer}"),
        });
    }
    let mut grads = trace.tape.backward(loss_node)?;
    Ok(SampleGradient {
        loss: value,
        grads: trace.params.iter().map(|&p| grads.take(p)).collect(),
        prediction,
    })
}

fn key_rng(parts: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, p) in parts.iter().take(4).enumerate() {
        key[8 * i..8 * i + 8].copy_from_slice(&p.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Steps through a schedule one epoch at a time. The optimizer lives for the
/// whole run, across the analog-to-spiking switch.
pub struct Trainer<'a, T: Scalar> {
    net: &'a mut Network<T>,
    schedule: TrainSchedule,
    optimizer: Optimizer<T>,
    epoch: usize,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(net: &'a mut Network<T>, schedule: TrainSchedule) -> Result<Self> {
        schedule.validate()?;
        net.set_lif(schedule.lif)?;
        let optimizer = Optimizer::new(schedule.optimizer, schedule.lr, net.params());
        Ok(Self {
            net,
            schedule,
            optimizer,
            epoch: 0,
        })
    }

    pub fn net(&self) -> &Network<T> {
        self.net
    }

    pub fn optimizer(&self) -> &Optimizer<T> {
        &self.optimizer
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.schedule.total_epochs
    }

    /// Runs one training epoch and evaluates on `test`.
    pub fn run_epoch(&mut self, train: &dyn Dataset, test: &dyn Dataset) -> Result<(EpochMetrics, EvalResult)> {
        check_classes(self.net, train)?;
        if train.is_empty() {
            return Err(SnnError::contract("empty training set"));
        }
        self.epoch += 1;
        let epoch = self.epoch;
        let phase = self.schedule.phase_of(epoch);
        let opts = ForwardOptions::new(phase, Mode::Train);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut key_rng(&[self.schedule.seed, epoch as u64, u64::MAX]));

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(self.schedule.batch_size) {
            let net: &Network<T> = self.net;
            let (seed, kind) = (self.schedule.seed, self.schedule.loss);
            let results: Vec<Result<(SampleGradient<T>, usize)>> = batch
                .par_iter()
                .map(|&idx| {
                    let sample = train.sample(idx)?;
                    let frames = sample.frames.cast::<T>();
                    let mut rng = key_rng(&[seed, epoch as u64, idx as u64]);
                    Ok((sample_gradient(net, &frames, sample.label, kind, opts, &mut rng)?, sample.label))
                })
                .collect();
            let mut total: Vec<Tensor<T>> = net.params().iter().map(Tensor::zeros_like).collect();
            for r in results {
                let (g, label) = r.map_err(|e| match e {
                    SnnError::Divergence { detail, .. } => SnnError::Divergence { epoch, detail },
                    other => other,
                })?;
                loss_sum += g.loss;
                correct += (g.prediction == label) as usize;
                for (acc, gi) in total.iter_mut().zip(&g.grads) {
                    acc.add_assign(gi)?;
                }
            }
            let norm = T::one() / T::from_usize(batch.len()).unwrap();
            for g in &mut total {
                *g = g.scale(norm);
            }
            if let Some(k) = total.iter().position(|g| !g.all_finite()) {
                return Err(self.divergence(epoch, k, "gradient"));
            }
            self.optimizer.step(self.net.params_mut(), &total)?;
            if let Some(k) = self.net.params().iter().position(|p| !p.all_finite()) {
                return Err(self.divergence(epoch, k, "weights"));
            }
        }
        let eval = evaluate(self.net, test, phase)?;
        let metrics = EpochMetrics {
            epoch,
            phase,
            train_acc: correct as f64 / train.len() as f64,
            test_acc: eval.top1,
            loss: loss_sum / train.len() as f64,
        };
        Ok((metrics, eval))
    }

    fn divergence(&self, epoch: usize, k: usize, what: &str) -> SnnError {
        let layer = self.net.param_layer(k);
        SnnError::Divergence {
            epoch,
            detail: format!(
                "non-finite {what} in node {layer} ({})",
                self.net.spec().layers[layer].kind.name()
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub history: Vec<EpochMetrics>,
    /// 1-based epoch of the best test accuracy (first one on ties). Spiking
    /// epochs take precedence over pretraining ones once any has run.
    pub best_epoch: usize,
    pub best_params: Vec<Tensor<T>>,
    pub best_eval: EvalResult,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn best_test_acc(&self) -> f64 {
        self.best_eval.top1
    }
}

/// Runs the whole schedule; `net` ends with the final weights and the
/// outcome carries the weights of the best test epoch.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &dyn Dataset,
    test_set: &dyn Dataset,
    schedule: &TrainSchedule,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    check_classes(net, test_set)?;
    let target = schedule.target_test_acc;
    let mut trainer = Trainer::new(net, schedule.clone())?;
    let mut history = Vec::new();
    let mut best: Option<(usize, Vec<Tensor<T>>, EvalResult)> = None;
    while !trainer.finished() {
        let (metrics, eval) = trainer.run_epoch(train_set, test_set)?;
        on_epoch(&metrics);
        let better = match &best {
            None => true,
            Some((epoch, _, b)) => {
                let prev = schedule.phase_of(*epoch);
                (metrics.phase == Phase::Spiking && prev == Phase::Analog) || (metrics.phase == prev && eval.top1 > b.top1)
            }
        };
        if better {
            best = Some((metrics.epoch, trainer.net().params().to_vec(), eval));
        }
        let reached = metrics.phase == Phase::Spiking && target.is_some_and(|t| metrics.test_acc >= t);
        history.push(metrics);
        if reached {
            break;
        }
    }
    let (best_epoch, best_params, best_eval) = match best {
        Some(b) => b,
        None => (0, trainer.net().params().to_vec(), evaluate(trainer.net(), test_set, schedule.phase_of(0))?),
    };
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_params,
        best_eval,
    })
}

/// Top-1 accuracy, confusion matrix and layer activity in evaluation mode.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &dyn Dataset, phase: Phase) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(SnnError::contract("evaluation on an empty dataset"));
    }
    check_classes(net, data)?;
    let synapses = net.spec().synapse_layers();
    let opts = ForwardOptions::new(phase, Mode::Eval);
    let per_sample: Vec<Result<(usize, usize, Vec<f64>, Vec<f64>)>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let sample = data.sample(i)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let trace = forward_window(net, &sample.frames.cast::<T>(), opts, &mut rng)?;
            let rates = synapses
                .iter()
                .map(|&s| trace.tape.value(trace.nodes[s]).mean().to_f64_lossy())
                .collect();
            Ok((
                sample.label,
                predict(&trace.spike_counts()),
                rates,
                trace.weighted_input_rates(net.spec()),
            ))
        })
        .collect();
    let c = net.spec().num_classes;
    let mut confusion = vec![vec![0u64; c]; c];
    let mut firing_rates = vec![0.0; synapses.len()];
    let mut input_rates = vec![0.0; net.params().len()];
    let mut correct = 0usize;
    for r in per_sample {
        let (label, pred, rates, inputs) = r?;
        confusion[label][pred] += 1;
        correct += (label == pred) as usize;
        firing_rates.iter_mut().zip(&rates).for_each(|(a, r)| *a += r);
        input_rates.iter_mut().zip(&inputs).for_each(|(a, r)| *a += r);
    }
    let n = data.len() as f64;
    firing_rates.iter_mut().for_each(|r| *r /= n);
    input_rates.iter_mut().for_each(|r| *r /= n);
    Ok(EvalResult {
        top1: correct as f64 / n,
        confusion,
        firing_rates,
        input_rates,
    })
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,phase,train_acc,test_acc,loss\n");
    for m in history {
        let _ = writeln!(s, "{},{},{},{},{}", m.epoch, m.phase.as_str(), m.train_acc, m.test_acc, m.loss);
    }
    s
}

pub fn confusion_csv(confusion: &[Vec<u64>]) -> String {
    let mut s = String::new();
    for row in confusion {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// `layer,rate` rows, one per synapse layer.
pub fn firing_rates_csv<T: Scalar>(net: &Network<T>, rates: &[f64]) -> String {
    let mut s = String::from("layer,rate\n");
    for (&node, r) in net.spec().synapse_layers().iter().zip(rates) {
        let _ = writeln!(s, "{node}:{},{r}", net.spec().layers[node].kind.name());
    }
    s
}
