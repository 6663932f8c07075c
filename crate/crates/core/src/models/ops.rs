//! Analytic operation counts.

use std::fmt::Write as _;

use super::spec::{LayerKind, NetworkSpec};
use crate::error::{Result, SnnError};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerOps {
    /// Graph node index.
    pub layer: usize,
    pub name: String,
    /// Multiply-accumulates per time step.
    pub macs: u64,
    /// Mean presynaptic activity, if measured.
    pub rate: Option<f64>,
    /// Accumulates per time step when only active inputs cost an addition.
    pub accs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpsReport {
    pub window: usize,
    pub layers: Vec<LayerOps>,
    /// Dense multiply-accumulates over a whole window.
    pub dense_macs: u64,
    /// Spike-driven accumulates over a whole window, when rates were given.
    pub spike_accs: Option<f64>,
}

impl OpsReport {
    /// `layer,macs,rate,accs` rows (per time step) and a closing per-window total.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,macs,rate,accs\n");
        for l in &self.layers {
            let rate = l.rate.map(|r| r.to_string()).unwrap_or_default();
            let accs = l.accs.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{}:{},{},{},{}", l.layer, l.name, l.macs, rate, accs);
        }
        let total = self.spike_accs.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(s, "total_per_window,{},,{}", self.dense_macs, total);
        s
    }
}

/// Counts MACs of every convolution and linear layer. `rates` holds one
/// presynaptic firing rate in `[0, 1]` per weighted layer, in parameter order.
pub fn count_ops(spec: &NetworkSpec, rates: Option<&[f64]>) -> Result<OpsReport> {
    let shapes = spec.infer_shapes()?;
    let weighted = spec.weighted_layers();
    if let Some(r) = rates {
        if r.len() != weighted.len() {
            return Err(SnnError::contract(format!(
                "{} firing rates given for {} weighted layers",
                r.len(),
                weighted.len()
            )));
        }
        if let Some(bad) = r.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SnnError::param(format!("firing rate {bad} outside [0,1]")));
        }
    }
    let mut layers = Vec::with_capacity(weighted.len());
    for (k, &i) in weighted.iter().enumerate() {
        let kind = &spec.layers[i].kind;
        let macs = match *kind {
            LayerKind::Conv {
                in_channels, kernel, ..
            } => {
                let out: usize = shapes[i].iter().product();
                (out * in_channels * kernel * kernel) as u64
            }
            LayerKind::Linear {
                in_features,
                out_features,
            } => (in_features * out_features) as u64,
            _ => unreachable!(),
        };
        let rate = rates.map(|r| r[k]);
        layers.push(LayerOps {
            layer: i,
            name: kind.name(),
            macs,
            rate,
            accs: rate.map(|r| macs as f64 * r),
        });
    }
    let window = spec.window;
    let dense_macs = window as u64 * layers.iter().map(|l| l.macs).sum::<u64>();
    let spike_accs = rates.map(|_| window as f64 * layers.iter().filter_map(|l| l.accs).sum::<f64>());
    Ok(OpsReport {
        window,
        layers,
        dense_macs,
        spike_accs,
    })
}
