//! Leaky integrate-and-fire dynamics.
//!
//! Spiking phase, per neuron and time step `t`:
//!
//! ```text
//! U[t] = alpha * (1 - O[t-1]) * U[t-1] + g[t]     (resting on)
//! U[t] = alpha * U[t-1] + g[t]                    (resting off)
//! O[t] = 1 if U[t] >= threshold else 0
//! ```
//!
//! Analog (pre-training) phase uses the resting-free update and the shifted
//! leaky-relu `f(U) = U` for `U >= threshold`, `-beta * U` otherwise.
//!
//! During backpropagation the step function's derivative is replaced by a
//! surrogate (Gaussian pdf centred on the threshold by default) and the reset
//! gate `(1 - O[t-1])` is treated as a constant.

use crate::error::{Result, SnnError};
use crate::tensor::{Backward, NodeId, Scalar, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surrogate {
    /// Normal pdf with mean `threshold` and variance `surrogate_width`.
    Gaussian,
    /// Box of width `surrogate_width` and height `1 / surrogate_width`.
    Rect,
}

impl std::str::FromStr for Surrogate {
    type Err = SnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Surrogate::Gaussian),
            "rect" => Ok(Surrogate::Rect),
            other => Err(SnnError::param(format!("unknown surrogate '{other}'"))),
        }
    }
}

impl std::fmt::Display for Surrogate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Surrogate::Gaussian => "gaussian",
            Surrogate::Rect => "rect",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifConfig {
    /// Membrane decay factor in `[0, 1]`.
    pub alpha: f64,
    pub threshold: f64,
    /// Enables the `(1 - O[t-1])` reset gate.
    pub resting: bool,
    /// Negative-side slope of the shifted leaky-relu.
    pub beta: f64,
    pub surrogate: Surrogate,
    /// Variance of the Gaussian surrogate, or width of the rect surrogate.
    pub surrogate_width: f64,
    /// Use `U - T` / `-beta * (U - T)` instead of `U` / `-beta * U` in the
    /// analog phase, which removes the jump at the threshold.
    pub continuous_relu: bool,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            threshold: 0.5,
            resting: false,
            beta: 0.01,
            surrogate: Surrogate::Gaussian,
            surrogate_width: 1.0 / 6.0,
            continuous_relu: false,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SnnError::param(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if !(self.threshold > 0.0) {
            return Err(SnnError::param(format!("threshold {} must be > 0", self.threshold)));
        }
        if !(self.beta >= 0.0) {
            return Err(SnnError::param(format!("beta {} must be >= 0", self.beta)));
        }
        if !(self.surrogate_width > 0.0) {
            return Err(SnnError::param(format!(
                "surrogate width {} must be > 0",
                self.surrogate_width
            )));
        }
        Ok(())
    }
}

/// Activation applied by a synapse layer during one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// Binary step with surrogate gradient; `resting` toggles the reset gate.
    Spike { resting: bool },
    /// Shifted leaky-relu on a resting-free membrane (pre-training).
    ShiftedRelu,
}

/// Membrane potential and last output of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LifLayerState<T: Scalar> {
    pub u: Tensor<T>,
    pub o_prev: Tensor<T>,
}

impl<T: Scalar> LifLayerState<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            u: Tensor::zeros(shape),
            o_prev: Tensor::zeros(shape),
        }
    }
}

struct Params<T> {
    alpha: T,
    threshold: T,
    beta: T,
    width: T,
}

impl<T: Scalar> Params<T> {
    fn of(cfg: &LifConfig) -> Self {
        Self {
            alpha: T::from_f64_lossy(cfg.alpha),
            threshold: T::from_f64_lossy(cfg.threshold),
            beta: T::from_f64_lossy(cfg.beta),
            width: T::from_f64_lossy(cfg.surrogate_width),
        }
    }
}

#[inline]
fn membrane<T: Scalar>(alpha: T, u_prev: T, o_prev: T, g: T, resting: bool) -> T {
    if resting {
        alpha * (T::one() - o_prev) * u_prev + g
    } else {
        alpha * u_prev + g
    }
}

#[inline]
fn step_fn<T: Scalar>(u: T, threshold: T) -> T {
    if u >= threshold {
        T::one()
    } else {
        T::zero()
    }
}

#[inline]
fn relu_fn<T: Scalar>(u: T, p: &Params<T>, continuous: bool) -> T {
    let v = if continuous { u - p.threshold } else { u };
    if u >= p.threshold {
        v
    } else {
        -p.beta * v
    }
}

#[inline]
fn relu_slope<T: Scalar>(u: T, p: &Params<T>) -> T {
    if u >= p.threshold {
        T::one()
    } else {
        -p.beta
    }
}

#[inline]
fn surrogate_at<T: Scalar>(u: T, p: &Params<T>, kind: Surrogate) -> T {
    let d = u - p.threshold;
    match kind {
        Surrogate::Gaussian => {
            let two = T::one() + T::one();
            let norm = (two * T::from_f64_lossy(std::f64::consts::PI) * p.width).sqrt();
            (-(d * d) / (two * p.width)).exp() / norm
        }
        Surrogate::Rect => {
            if d.abs() <= p.width / (T::one() + T::one()) {
                T::one() / p.width
            } else {
                T::zero()
            }
        }
    }
}

fn check_shapes<T: Scalar>(state: &LifLayerState<T>, g: &Tensor<T>) -> Result<()> {
    if state.u.shape() != g.shape() || state.o_prev.shape() != g.shape() {
        return Err(SnnError::dim(format!(
            "layer input {:?} does not match LIF state {:?}",
            g.shape(),
            state.u.shape()
        )));
    }
    Ok(())
}

/// One spiking-phase time step. Fires on `U >= threshold`; the membrane is not
/// reset after a spike unless the reset gate is enabled.
pub fn lif_step<T: Scalar>(
    state: &LifLayerState<T>,
    g: &Tensor<T>,
    cfg: &LifConfig,
) -> Result<(LifLayerState<T>, Tensor<T>)> {
    check_shapes(state, g)?;
    let p = Params::<T>::of(cfg);
    let mut u = Tensor::zeros(g.shape());
    let mut o = Tensor::zeros(g.shape());
    spike_rows(&p, cfg.resting, state.u.data(), state.o_prev.data(), g.data(), u.data_mut(), o.data_mut());
    Ok((LifLayerState { u, o_prev: o.clone() }, o))
}

/// One analog pre-training step: resting-free membrane update followed by the
/// shifted leaky-relu.
pub fn pretrain_step<T: Scalar>(
    state: &LifLayerState<T>,
    g: &Tensor<T>,
    cfg: &LifConfig,
) -> Result<(LifLayerState<T>, Tensor<T>)> {
    check_shapes(state, g)?;
    let p = Params::<T>::of(cfg);
    let mut u = Tensor::zeros(g.shape());
    let mut o = Tensor::zeros(g.shape());
    relu_rows(&p, cfg.continuous_relu, state.u.data(), g.data(), u.data_mut(), o.data_mut());
    Ok((LifLayerState { u, o_prev: o.clone() }, o))
}

fn spike_rows<T: Scalar>(p: &Params<T>, resting: bool, u_prev: &[T], o_prev: &[T], g: &[T], u: &mut [T], o: &mut [T]) {
    for i in 0..g.len() {
        let v = membrane(p.alpha, u_prev[i], o_prev[i], g[i], resting);
        u[i] = v;
        o[i] = step_fn(v, p.threshold);
    }
}

fn relu_rows<T: Scalar>(p: &Params<T>, continuous: bool, u_prev: &[T], g: &[T], u: &mut [T], o: &mut [T]) {
    for i in 0..g.len() {
        let v = membrane(p.alpha, u_prev[i], T::zero(), g[i], false);
        u[i] = v;
        o[i] = relu_fn(v, p, continuous);
    }
}

/// Elementwise surrogate derivative of the step function.
pub fn surrogate_grad<T: Scalar>(u: &Tensor<T>, cfg: &LifConfig) -> Result<Tensor<T>> {
    if !(cfg.surrogate_width > 0.0) {
        return Err(SnnError::param(format!(
            "surrogate width {} must be > 0",
            cfg.surrogate_width
        )));
    }
    let p = Params::<T>::of(cfg);
    Ok(u.map(|v| surrogate_at(v, &p, cfg.surrogate)))
}

/// Shifted leaky-relu (analog phase activation).
pub fn shifted_leaky_relu<T: Scalar>(u: &Tensor<T>, cfg: &LifConfig) -> Tensor<T> {
    let p = Params::<T>::of(cfg);
    u.map(|v| relu_fn(v, &p, cfg.continuous_relu))
}

/// Slope of the shifted leaky-relu: 1 at or above threshold, `-beta` below.
pub fn shifted_leaky_relu_grad<T: Scalar>(u: &Tensor<T>, cfg: &LifConfig) -> Tensor<T> {
    let p = Params::<T>::of(cfg);
    u.map(|v| relu_slope(v, &p))
}

/// One spiking-phase BPTT step.
///
/// `state_t` is the layer state after step `t` (`u = U[t]`, `o_prev = O[t]`).
/// Returns `(dL/dU[t], dL/dg[t])`, which are equal since `g` enters `U` additively.
pub fn lif_backward_step<T: Scalar>(
    dl_do: &Tensor<T>,
    dl_du_next: &Tensor<T>,
    state_t: &LifLayerState<T>,
    cfg: &LifConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_shapes(state_t, dl_do)?;
    check_shapes(state_t, dl_du_next)?;
    let p = Params::<T>::of(cfg);
    let mut du = Tensor::zeros(dl_do.shape());
    spike_backward_rows(
        &p,
        cfg.surrogate,
        cfg.resting,
        dl_do.data(),
        dl_du_next.data(),
        state_t.u.data(),
        state_t.o_prev.data(),
        du.data_mut(),
    );
    Ok((du.clone(), du))
}

/// Analog-phase counterpart of [`lif_backward_step`].
pub fn pretrain_backward_step<T: Scalar>(
    dl_do: &Tensor<T>,
    dl_du_next: &Tensor<T>,
    state_t: &LifLayerState<T>,
    cfg: &LifConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_shapes(state_t, dl_do)?;
    check_shapes(state_t, dl_du_next)?;
    let p = Params::<T>::of(cfg);
    let mut du = Tensor::zeros(dl_do.shape());
    relu_backward_rows(&p, dl_do.data(), dl_du_next.data(), state_t.u.data(), du.data_mut());
    Ok((du.clone(), du))
}

#[allow(clippy::too_many_arguments)]
fn spike_backward_rows<T: Scalar>(
    p: &Params<T>,
    kind: Surrogate,
    resting: bool,
    dl_do: &[T],
    dl_du_next: &[T],
    u: &[T],
    o: &[T],
    du: &mut [T],
) {
    for i in 0..du.len() {
        let carry = if resting { p.alpha * (T::one() - o[i]) } else { p.alpha };
        du[i] = dl_do[i] * surrogate_at(u[i], p, kind) + dl_du_next[i] * carry;
    }
}

fn relu_backward_rows<T: Scalar>(p: &Params<T>, dl_do: &[T], dl_du_next: &[T], u: &[T], du: &mut [T]) {
    for i in 0..du.len() {
        du[i] = dl_do[i] * relu_slope(u[i], p) + dl_du_next[i] * p.alpha;
    }
}

/// Per-neuron mean over the leading time axis of `[window, ..]` spikes.
pub fn rate_decode<T: Scalar>(spikes: &Tensor<T>) -> Result<Tensor<T>> {
    let steps = *spikes
        .shape()
        .first()
        .ok_or_else(|| SnnError::contract("rate_decode needs a [window, ..] tensor"))?;
    if steps == 0 {
        return Err(SnnError::contract("rate_decode over an empty window"));
    }
    let mut acc = vec![T::zero(); spikes.row_len()];
    for t in 0..steps {
        for (a, &v) in acc.iter_mut().zip(spikes.row(t)) {
            *a += v;
        }
    }
    let norm = T::one() / T::from_usize(steps).unwrap();
    acc.iter_mut().for_each(|a| *a *= norm);
    Tensor::new(&spikes.shape()[1..], acc)
}

/// Runs a synapse over a whole window `[T, ..]` on the tape, starting from a
/// zero state. The recorded node backpropagates through time.
pub fn record_synapse<T: Scalar>(
    tape: &mut Tape<T>,
    input: NodeId,
    cfg: &LifConfig,
    activation: Activation,
) -> Result<NodeId> {
    let g = tape.value(input);
    let steps = *g
        .shape()
        .first()
        .ok_or_else(|| SnnError::dim("synapse input needs a leading time axis"))?;
    let p = Params::<T>::of(cfg);
    let row = g.row_len();
    let mut u = Tensor::zeros(g.shape());
    let mut out = Tensor::zeros(g.shape());
    let mut u_prev = vec![T::zero(); row];
    let mut o_prev = vec![T::zero(); row];
    for t in 0..steps {
        let u_t = u.row_mut(t);
        let o_t = out.row_mut(t);
        match activation {
            Activation::Spike { resting } => spike_rows(&p, resting, &u_prev, &o_prev, g.row(t), u_t, o_t),
            Activation::ShiftedRelu => relu_rows(&p, cfg.continuous_relu, &u_prev, g.row(t), u_t, o_t),
        }
        u_prev.copy_from_slice(u_t);
        o_prev.copy_from_slice(o_t);
    }
    Ok(tape.custom(
        &[input],
        out,
        Box::new(SynapseOp {
            cfg: *cfg,
            activation,
            u,
        }),
    ))
}

struct SynapseOp<T: Scalar> {
    cfg: LifConfig,
    activation: Activation,
    /// Membrane potential for every step, `[T, ..]`.
    u: Tensor<T>,
}

impl<T: Scalar> Backward<T> for SynapseOp<T> {
    fn name(&self) -> &'static str {
        "synapse"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let steps = self.u.shape()[0];
        if output.shape() != self.u.shape() || grad_out.shape() != self.u.shape() {
            return Err(SnnError::contract("synapse backward without a full stored trace"));
        }
        let p = Params::<T>::of(&self.cfg);
        let row = self.u.row_len();
        let mut dg = Tensor::zeros(self.u.shape());
        let mut du_next = vec![T::zero(); row];
        for t in (0..steps).rev() {
            let du_t = dg.row_mut(t);
            match self.activation {
                Activation::Spike { resting } => spike_backward_rows(
                    &p,
                    self.cfg.surrogate,
                    resting,
                    grad_out.row(t),
                    &du_next,
                    self.u.row(t),
                    output.row(t),
                    du_t,
                ),
                Activation::ShiftedRelu => {
                    relu_backward_rows(&p, grad_out.row(t), &du_next, self.u.row(t), du_t)
                }
            }
            du_next.copy_from_slice(du_t);
        }
        Ok(vec![Some(dg)])
    }
}

/// Membrane potentials `[T, ..]` of a synapse driven by the tape value `input`.
pub fn membrane_trace<T: Scalar>(tape: &Tape<T>, input: NodeId, cfg: &LifConfig, activation: Activation) -> Result<Tensor<T>> {
    let g = tape.value(input);
    let steps = g.shape()[0];
    let p = Params::<T>::of(cfg);
    let row = g.row_len();
    let mut u = Tensor::zeros(g.shape());
    let mut u_prev = vec![T::zero(); row];
    let mut o_prev = vec![T::zero(); row];
    let mut o_t = vec![T::zero(); row];
    for t in 0..steps {
        let u_t = u.row_mut(t);
        match activation {
            Activation::Spike { resting } => spike_rows(&p, resting, &u_prev, &o_prev, g.row(t), u_t, &mut o_t),
            Activation::ShiftedRelu => relu_rows(&p, cfg.continuous_relu, &u_prev, g.row(t), u_t, &mut o_t),
        }
        u_prev.copy_from_slice(u_t);
        o_prev.copy_from_slice(&o_t);
    }
    Ok(u)
}
