//! Rate-based losses against one-hot targets.

use crate::error::{Result, SnnError};
use crate::tensor::{Backward, NodeId, Scalar, Tape, Tensor};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Bce,
}

impl std::str::FromStr for LossKind {
    type Err = SnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "bce" => Ok(LossKind::Bce),
            other => Err(SnnError::param(format!("unknown loss {other:?} (mse, bce)"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
        })
    }
}

pub fn one_hot(label: usize, num_classes: usize) -> Result<Vec<f64>> {
    if label >= num_classes {
        return Err(SnnError::contract(format!("label {label} outside {num_classes} classes")));
    }
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    Ok(v)
}

fn check(rates: &[f64], target: &[f64]) -> Result<()> {
    if rates.len() != target.len() || rates.is_empty() {
        return Err(SnnError::dim(format!(
            "{} rates against {} targets",
            rates.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Mean squared error over classes.
pub fn loss_mse(rates: &[f64], target: &[f64]) -> Result<f64> {
    check(rates, target)?;
    Ok(rates.iter().zip(target).map(|(r, y)| (r - y) * (r - y)).sum::<f64>() / rates.len() as f64)
}

/// Mean binary cross-entropy over classes, rates clamped to `[eps, 1 - eps]`.
pub fn loss_bce(rates: &[f64], target: &[f64]) -> Result<f64> {
    check(rates, target)?;
    let n = rates.len() as f64;
    Ok(rates
        .iter()
        .zip(target)
        .map(|(&r, &y)| {
            let r = r.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * r.ln() + (1.0 - y) * (1.0 - r).ln())
        })
        .sum::<f64>()
        / n)
}

pub fn loss_value(kind: LossKind, rates: &[f64], target: &[f64]) -> Result<f64> {
    match kind {
        LossKind::Mse => loss_mse(rates, target),
        LossKind::Bce => loss_bce(rates, target),
    }
}

/// dLoss/dRate. For BCE the derivative is taken at the clamped rate and
/// passed straight through the clamp.
pub fn loss_grad(kind: LossKind, rates: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check(rates, target)?;
    let n = rates.len() as f64;
    Ok(rates
        .iter()
        .zip(target)
        .map(|(&r, &y)| match kind {
            LossKind::Mse => 2.0 * (r - y) / n,
            LossKind::Bce => {
                let r = r.clamp(BCE_EPS, 1.0 - BCE_EPS);
                (r - y) / (r * (1.0 - r)) / n
            }
        })
        .collect())
}

struct RateLossOp {
    kind: LossKind,
    target: Vec<f64>,
}

impl<T: Scalar> Backward<T> for RateLossOp {
    fn name(&self) -> &'static str {
        "rate_loss"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let rates: Vec<f64> = inputs[0].data().iter().map(|v| v.to_f64_lossy()).collect();
        let upstream = grad_out.item()?.to_f64_lossy();
        let g = loss_grad(self.kind, &rates, &self.target)?;
        let data = g.iter().map(|v| T::from_f64_lossy(v * upstream)).collect();
        Ok(vec![Some(Tensor::new(inputs[0].shape(), data)?)])
    }
}

/// Records `loss(rate_decode(outputs), one_hot(label))` for `[window, classes]`
/// outputs; returns the scalar loss node.
pub fn record_rate_loss<T: Scalar>(tape: &mut Tape<T>, outputs: NodeId, label: usize, kind: LossKind) -> Result<NodeId> {
    let rates_node = tape.mean_axis0(outputs)?;
    let rates: Vec<f64> = tape.value(rates_node).data().iter().map(|v| v.to_f64_lossy()).collect();
    let target = one_hot(label, rates.len())?;
    let value = loss_value(kind, &rates, &target)?;
    Ok(tape.custom(
        &[rates_node],
        Tensor::scalar(T::from_f64_lossy(value)),
        Box::new(RateLossOp { kind, target }),
    ))
}
