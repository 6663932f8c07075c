//! `SNNW1` weight files: magic, `u32` tensor count, per-tensor `u32` rank and
//! dims, then every tensor's data as little-endian `f32`, all in graph order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::Network;
use super::spec::NetworkSpec;
use crate::error::{Result, SnnError};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SNNW1";

pub fn write_weights<T: Scalar, W: Write>(mut out: W, params: &[Tensor<T>]) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        out.write_all(&(p.ndim() as u32).to_le_bytes())?;
        for &d in p.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for p in params {
        for v in p.data() {
            out.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    input
        .read_exact(&mut b)
        .map_err(|_| SnnError::format(format!("checkpoint truncated in {what}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_weights<T: Scalar, R: Read>(mut input: R) -> Result<Vec<Tensor<T>>> {
    let mut magic = [0u8; 5];
    input
        .read_exact(&mut magic)
        .map_err(|_| SnnError::format("checkpoint shorter than its magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SnnError::format(format!("bad checkpoint magic {magic:?}")));
    }
    let count = read_u32(&mut input, "tensor count")? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let ndim = read_u32(&mut input, "shape header")? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(SnnError::format(format!("implausible tensor rank {ndim}")));
        }
        let shape = (0..ndim)
            .map(|_| read_u32(&mut input, "shape header").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        shapes.push(shape);
    }
    shapes
        .into_iter()
        .map(|shape| {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            input
                .read_exact(&mut bytes)
                .map_err(|_| SnnError::format(format!("checkpoint truncated in {shape:?} weights")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect();
            Tensor::new(&shape, data)
        })
        .collect()
}

pub fn save_checkpoint<T: Scalar>(path: &Path, net: &Network<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| SnnError::path(path, e))?;
    write_weights(BufWriter::new(file), net.params())
}

/// Loads weights for `spec`; shape disagreements are format errors that list
/// the expected and the stored shapes.
pub fn load_checkpoint<T: Scalar>(path: &Path, spec: NetworkSpec) -> Result<Network<T>> {
    let file = File::open(path).map_err(|e| SnnError::path(path, e))?;
    let params = read_weights(BufReader::new(file))?;
    Network::from_params(spec, params)
}
