//! Per-time-step feature-map images of a synapse layer.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{forward_window, ForwardOptions, Mode, Network, Phase};
use crate::error::{Result, SnnError};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DumpFormat {
    /// Plain-text PGM (`P2`).
    Pgm,
    Csv,
}

impl std::str::FromStr for DumpFormat {
    type Err = SnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" => Ok(DumpFormat::Pgm),
            "csv" => Ok(DumpFormat::Csv),
            other => Err(SnnError::param(format!("unknown dump format {other:?}"))),
        }
    }
}

/// Lays out a `[C, H, W]` (or `[N]`) map as a near-square grid of channels.
fn tile(step: &[f64], shape: &[usize]) -> (usize, usize, Vec<f64>) {
    let (c, h, w) = match *shape {
        [c, h, w] => (c, h, w),
        _ => (1, 1, step.len()),
    };
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let (height, width) = (rows * h, cols * w);
    let mut img = vec![0.0; height * width];
    for ch in 0..c {
        let (r0, c0) = ((ch / cols) * h, (ch % cols) * w);
        for y in 0..h {
            for x in 0..w {
                img[(r0 + y) * width + c0 + x] = step[(ch * h + y) * w + x];
            }
        }
    }
    (height, width, img)
}

fn render(format: DumpFormat, height: usize, width: usize, img: &[f64]) -> String {
    let mut s = String::new();
    match format {
        DumpFormat::Pgm => {
            let binary = img.iter().all(|&v| v == 0.0 || v == 1.0);
            let maxval = if binary { 1 } else { 255 };
            let _ = writeln!(s, "P2\n{width} {height}\n{maxval}");
            for row in img.chunks(width) {
                let line: Vec<String> = row
                    .iter()
                    .map(|&v| {
                        let q = if binary { v } else { (v.clamp(0.0, 1.0) * 255.0).round() };
                        (q as u32).to_string()
                    })
                    .collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        DumpFormat::Csv => {
            for row in img.chunks(width) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{}", line.join(","));
            }
        }
    }
    s
}

/// Writes one file per time step with the outputs of the `synapse_index`-th
/// synapse layer (0 is the input synapse) for a single sample.
pub fn dump_feature_maps<T: Scalar>(
    net: &Network<T>,
    frames: &Tensor<T>,
    synapse_index: usize,
    phase: Phase,
    dir: &Path,
    format: DumpFormat,
) -> Result<Vec<PathBuf>> {
    let synapses = net.spec().synapse_layers();
    let Some(&node) = synapses.get(synapse_index) else {
        return Err(SnnError::param(format!(
            "synapse index {synapse_index} out of range (network has {})",
            synapses.len()
        )));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = forward_window(net, frames, ForwardOptions::new(phase, Mode::Eval), &mut rng)?;
    let maps = trace.tape.value(trace.nodes[node]);
    let shape = &net.shapes()[node];
    std::fs::create_dir_all(dir).map_err(|e| SnnError::path(dir, e))?;
    let ext = match format {
        DumpFormat::Pgm => "pgm",
        DumpFormat::Csv => "csv",
    };
    let mut written = Vec::with_capacity(maps.shape()[0]);
    for t in 0..maps.shape()[0] {
        let step: Vec<f64> = maps.row(t).iter().map(|v| v.to_f64_lossy()).collect();
        let (h, w, img) = tile(&step, shape);
        let path = dir.join(format!("synapse{synapse_index}_t{t:02}.{ext}"));
        std::fs::write(&path, render(format, h, w, &img)).map_err(|e| SnnError::path(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
