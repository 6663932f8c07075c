//! Adam and SGD with momentum.

use crate::error::{Result, SnnError};
use crate::tensor::{Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const SGD_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl std::str::FromStr for OptimizerKind {
    type Err = SnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" | "sgd_momentum" | "sgd-momentum" => Ok(OptimizerKind::SgdMomentum),
            other => Err(SnnError::param(format!("unknown optimizer {other:?} (adam, sgd)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
            step: 0,
        }
    }
}

fn check_lengths<T: Scalar>(params: &[Tensor<T>], grads: &[Tensor<T>], state: &[Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(SnnError::contract(format!(
            "{} parameters, {} gradients, {} state tensors",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.expect_same_shape(g, "optimizer")?;
    }
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_lengths(params, grads, &state.m)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
    let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - beta1), T::from_f64_lossy(1.0 - beta2));
    let (lr_t, c1_t, c2_t, eps_t) = (
        T::from_f64_lossy(lr),
        T::from_f64_lossy(c1),
        T::from_f64_lossy(c2),
        T::from_f64_lossy(eps),
    );
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            let m_hat = m[i] / c1_t;
            let v_hat = v[i] / c2_t;
            *w -= lr_t * m_hat / (v_hat.sqrt() + eps_t);
        }
    }
    Ok(())
}

/// `v <- mu v + g; p <- p - lr v`.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    velocity: &mut [Tensor<T>],
    lr: f64,
    mu: f64,
) -> Result<()> {
    check_lengths(params, grads, velocity)?;
    let (lr_t, mu_t) = (T::from_f64_lossy(lr), T::from_f64_lossy(mu));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu_t * *vi + gi;
            *w -= lr_t * *vi;
        }
    }
    Ok(())
}

/// Optimizer with its state; kept for the whole run.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<T: Scalar> {
    Adam { lr: f64, state: AdamState<T> },
    Sgd { lr: f64, mu: f64, velocity: Vec<Tensor<T>> },
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Tensor<T>]) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                state: AdamState::zeros_like(params),
            },
            OptimizerKind::SgdMomentum => Optimizer::Sgd {
                lr,
                mu: SGD_MOMENTUM,
                velocity: params.iter().map(Tensor::zeros_like).collect(),
            },
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        match self {
            Optimizer::Adam { lr, state } => adam_step(params, grads, state, *lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS),
            Optimizer::Sgd { lr, mu, velocity } => sgd_momentum_step(params, grads, velocity, *lr, *mu),
        }
    }
}
