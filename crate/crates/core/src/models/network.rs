//! Weights for a [`NetworkSpec`] and window-level forward execution on a tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerKind, Merge, NetworkSpec};
use crate::error::{Result, SnnError};
use crate::lif::{record_synapse, Activation, LifConfig};
use crate::tensor::{dropout_mask, NodeId, Scalar, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Shifted leaky-relu pre-training; the output layer keeps its step.
    Analog,
    Spiking,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Analog => "pretrain",
            Phase::Spiking => "spiking",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub phase: Phase,
    pub mode: Mode,
    /// In the analog phase, give the output layer the shifted leaky-relu too.
    /// Makes the whole network piecewise smooth for gradient checks.
    pub analog_output: bool,
}

impl ForwardOptions {
    pub fn new(phase: Phase, mode: Mode) -> Self {
        Self {
            phase,
            mode,
            analog_output: false,
        }
    }
}

/// A network description together with one weight tensor per weighted layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    params: Vec<Tensor<T>>,
    /// Node index -> position in `params`.
    param_of: Vec<Option<usize>>,
}

impl<T: Scalar> Network<T> {
    /// Kaiming-uniform initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .param_shapes()
            .iter()
            .map(|shape| {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                    .collect();
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(spec, params)
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let params = spec.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let expected = spec.param_shapes();
        if expected.len() != params.len() || expected.iter().zip(&params).any(|(e, p)| e[..] != *p.shape()) {
            return Err(SnnError::Format(format!(
                "weight shapes {:?} do not match network layers {:?}",
                params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>(),
                expected
            )));
        }
        let mut param_of = vec![None; spec.layers.len()];
        for (k, idx) in spec.weighted_layers().into_iter().enumerate() {
            param_of[idx] = Some(k);
        }
        Ok(Self {
            spec,
            shapes,
            params,
            param_of,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Per-step output shape of every node.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn set_lif(&mut self, cfg: LifConfig) -> Result<()> {
        cfg.validate()?;
        self.spec.set_lif(cfg);
        Ok(())
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(SnnError::param(format!("dropout rate {rate} outside [0,1)")));
        }
        self.spec.set_dropout(rate);
        Ok(())
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            param_of: self.param_of.clone(),
        }
    }

    /// Node index of the `k`-th weight tensor.
    pub fn param_layer(&self, k: usize) -> usize {
        self.param_of.iter().position(|p| *p == Some(k)).expect("parameter index in range")
    }
}

/// Everything recorded by one forward pass over a window.
pub struct WindowTrace<T: Scalar> {
    pub tape: Tape<T>,
    /// Class-layer outputs `[window, num_classes]`.
    pub output: NodeId,
    /// Weight leaves, in parameter order.
    pub params: Vec<NodeId>,
    /// Output of every graph node, `[window, ..]`.
    pub nodes: Vec<NodeId>,
    /// Input of every graph node after any skip merge, `[window, ..]`.
    pub inputs: Vec<NodeId>,
}

impl<T: Scalar> WindowTrace<T> {
    pub fn output_value(&self) -> &Tensor<T> {
        self.tape.value(self.output)
    }

    /// Per-class spike counts over the window.
    pub fn spike_counts(&self) -> Vec<f64> {
        let out = self.output_value();
        let mut counts = vec![0.0; out.row_len()];
        for t in 0..out.shape()[0] {
            for (c, v) in counts.iter_mut().zip(out.row(t)) {
                *c += v.to_f64_lossy();
            }
        }
        counts
    }

    /// Mean input activity of each weighted layer, in parameter order.
    pub fn weighted_input_rates(&self, spec: &NetworkSpec) -> Vec<f64> {
        spec.weighted_layers()
            .into_iter()
            .map(|i| self.tape.value(self.inputs[i]).mean().to_f64_lossy())
            .collect()
    }
}

/// Runs `frames` (`[window, C, H, W]`) through the network from zero LIF state.
pub fn forward_window<T: Scalar, R: Rng + ?Sized>(
    net: &Network<T>,
    frames: &Tensor<T>,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<WindowTrace<T>> {
    let spec = &net.spec;
    let window = spec.window;
    let expected: Vec<usize> = std::iter::once(window).chain(spec.input_shape.iter().copied()).collect();
    if frames.shape() != expected {
        return Err(SnnError::dim(format!(
            "frames {:?} do not match network input {:?}",
            frames.shape(),
            expected
        )));
    }
    let mut tape = Tape::new();
    let params: Vec<NodeId> = net.params.iter().map(|p| tape.param(p.clone())).collect();
    let input = tape.constant(frames.clone());
    let output_idx = spec.output_node();
    let mut nodes: Vec<NodeId> = Vec::with_capacity(spec.layers.len());
    let mut inputs: Vec<NodeId> = Vec::with_capacity(spec.layers.len());

    for (i, layer) in spec.layers.iter().enumerate() {
        let mut x = match spec.source_of(i) {
            None => input,
            Some(src) => nodes[src],
        };
        if let Some(edge) = spec.skip_into(i) {
            let other = nodes[edge.from];
            x = match edge.merge {
                Merge::Add => tape.add(x, other)?,
                Merge::Concat => tape.concat(x, other)?,
            };
        }
        inputs.push(x);
        let y = match &layer.kind {
            LayerKind::InputSynapse(cfg) | LayerKind::Synapse(cfg) => {
                let activation = match opts.phase {
                    Phase::Spiking => Activation::Spike { resting: cfg.resting },
                    Phase::Analog if i == output_idx && !opts.analog_output => Activation::Spike { resting: false },
                    Phase::Analog => Activation::ShiftedRelu,
                };
                record_synapse(&mut tape, x, cfg, activation)?
            }
            LayerKind::Conv { stride, pad, .. } => {
                let w = params[net.param_of[i].expect("conv has weights")];
                tape.conv2d(x, w, *stride, *pad)?
            }
            LayerKind::Linear { .. } => {
                let w = params[net.param_of[i].expect("linear has weights")];
                tape.linear(x, w)?
            }
            LayerKind::AvgPool { k } => tape.avg_pool(x, *k)?,
            LayerKind::GlobalAvgPool => tape.global_avg_pool(x)?,
            LayerKind::Flatten => {
                let row = tape.value(x).row_len();
                tape.reshape(x, &[window, row])?
            }
            LayerKind::Dropout { rate } => {
                if opts.mode == Mode::Eval || *rate == 0.0 {
                    x
                } else {
                    let step: Tensor<T> = dropout_mask(&net.shapes[i], *rate, true, rng)?;
                    let mut full = Vec::with_capacity(window * step.len());
                    for _ in 0..window {
                        full.extend_from_slice(step.data());
                    }
                    let shape = tape.value(x).shape().to_vec();
                    tape.mul_const(x, Tensor::new(&shape, full)?)?
                }
            }
        };
        nodes.push(y);
    }
    Ok(WindowTrace {
        tape,
        output: nodes[output_idx],
        params,
        nodes,
        inputs,
    })
}
