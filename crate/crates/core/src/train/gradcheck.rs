//! Whole-network finite-difference check in the analog phase.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{record_rate_loss, LossKind};
use crate::error::Result;
use crate::lif::{membrane_trace, Activation};
use crate::models::{forward_window, ForwardOptions, Mode, Network, Phase};
use crate::tensor::{relative_error, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGradCheck {
    pub max_rel_err: f64,
    /// `(parameter tensor, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates skipped because they move a membrane potential that lies
    /// near the threshold.
    pub skipped: usize,
}

struct Probe {
    loss: f64,
    /// Membrane potentials of every synapse, flattened in node order.
    membranes: Vec<f64>,
}

fn probe(net: &Network<f64>, frames: &Tensor<f64>, label: usize, kind: LossKind) -> Result<(Probe, Vec<Tensor<f64>>)> {
    let opts = ForwardOptions {
        phase: Phase::Analog,
        mode: Mode::Eval,
        analog_output: true,
    };
    let mut trace = forward_window(net, frames, opts, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut membranes = Vec::new();
    for s in net.spec().synapse_layers() {
        let cfg = net.spec().layers[s].kind.lif().expect("synapse");
        membranes.extend(membrane_trace(&trace.tape, trace.inputs[s], cfg, Activation::ShiftedRelu)?.into_data());
    }
    let loss_node = record_rate_loss(&mut trace.tape, trace.output, label, kind)?;
    let loss = trace.tape.value(loss_node).item()?;
    let mut grads = trace.tape.backward(loss_node)?;
    let grads = trace.params.iter().map(|&p| grads.take(p)).collect();
    Ok((Probe { loss, membranes }, grads))
}

/// Compares tape gradients of the rate loss against central differences for
/// every weight, with every synapse (output included) on the shifted
/// leaky-relu. A coordinate is skipped when perturbing it by `eps` changes a
/// membrane potential lying within `margin` of its threshold, since the
/// activation jumps there.
pub fn network_grad_check(
    net: &Network<f64>,
    frames: &Tensor<f64>,
    label: usize,
    kind: LossKind,
    eps: f64,
    margin: f64,
) -> Result<NetworkGradCheck> {
    let (base, analytic) = probe(net, frames, label, kind)?;
    let thresholds: Vec<f64> = net
        .spec()
        .synapse_layers()
        .iter()
        .flat_map(|&s| {
            let t = net.spec().layers[s].kind.lif().expect("synapse").threshold;
            let n = net.spec().window * net.shapes()[s].iter().product::<usize>();
            std::iter::repeat(t).take(n)
        })
        .collect();
    let mut report = NetworkGradCheck {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let mut work = net.clone();
    for k in 0..net.params().len() {
        for i in 0..net.params()[k].len() {
            let orig = net.params()[k].data()[i];
            work.params_mut()[k].data_mut()[i] = orig + eps;
            let (up, _) = probe(&work, frames, label, kind)?;
            work.params_mut()[k].data_mut()[i] = orig - eps;
            let (down, _) = probe(&work, frames, label, kind)?;
            work.params_mut()[k].data_mut()[i] = orig;

            let near = (0..base.membranes.len()).any(|j| {
                let u0 = base.membranes[j];
                let moved = up.membranes[j] != u0 || down.membranes[j] != u0;
                let close = [u0, up.membranes[j], down.membranes[j]]
                    .iter()
                    .any(|u| (u - thresholds[j]).abs() < margin);
                let crossed = (up.membranes[j] >= thresholds[j]) != (u0 >= thresholds[j])
                    || (down.membranes[j] >= thresholds[j]) != (u0 >= thresholds[j]);
                moved && (close || crossed)
            });
            if near {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let numeric = (up.loss - down.loss) / (2.0 * eps);
            let err = relative_error(analytic[k].data()[i], numeric);
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((k, i));
            }
        }
    }
    Ok(report)
}
