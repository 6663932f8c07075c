//! `SSEQ1` dataset cache: magic, `u8` sequence id, `u8` class count, then
//! `u32` LE sample count, window, channels, height and width; each sample
//! is a label byte followed by its frames as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::sequence::{SampleMeta, SequenceSample, Variant};
use crate::error::{Result, SnnError};
use crate::tensor::Tensor;

pub const CACHE_MAGIC: &[u8; 5] = b"SSEQ1";
pub const NMNIST_SEQ_ID: u8 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheHeader {
    pub seq_id: u8,
    pub num_classes: u8,
    pub count: u32,
    pub window: u32,
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

impl CacheHeader {
    pub fn frame_shape(&self) -> [usize; 4] {
        [self.window as usize, self.channels as usize, self.height as usize, self.width as usize]
    }

    fn frame_len(&self) -> usize {
        self.frame_shape().iter().product()
    }

    fn to_bytes(self) -> Vec<u8> {
        let mut b = CACHE_MAGIC.to_vec();
        b.push(self.seq_id);
        b.push(self.num_classes);
        for v in [self.count, self.window, self.channels, self.height, self.width] {
            b.extend(v.to_le_bytes());
        }
        b
    }
}

/// Streams samples into a cache; the sample count is fixed by the header.
pub struct CacheWriter<W: Write> {
    inner: W,
    header: CacheHeader,
    written: u32,
    buf: Vec<u8>,
}

impl<W: Write> CacheWriter<W> {
    pub fn new(mut inner: W, header: CacheHeader) -> Result<Self> {
        inner.write_all(&header.to_bytes())?;
        Ok(Self {
            inner,
            header,
            written: 0,
            buf: Vec::new(),
        })
    }

    pub fn push(&mut self, sample: &SequenceSample) -> Result<()> {
        if self.written == self.header.count {
            return Err(SnnError::contract(format!("cache already holds {} samples", self.header.count)));
        }
        if sample.frames.shape() != self.header.frame_shape() {
            return Err(SnnError::dim(format!(
                "sample frames {:?} do not match cache frames {:?}",
                sample.frames.shape(),
                self.header.frame_shape()
            )));
        }
        if sample.label >= self.header.num_classes as usize {
            return Err(SnnError::contract(format!(
                "label {} outside {} classes",
                sample.label, self.header.num_classes
            )));
        }
        self.buf.clear();
        self.buf.push(sample.label as u8);
        for v in sample.frames.data() {
            self.buf.extend(v.to_le_bytes());
        }
        self.inner.write_all(&self.buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.count {
            return Err(SnnError::contract(format!(
                "cache header promises {} samples, {} written",
                self.header.count, self.written
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|_| SnnError::format(format!("cache truncated in {what}")))
}

pub fn read_cache_header<R: Read>(input: &mut R) -> Result<CacheHeader> {
    let mut head = [0u8; 27];
    read_exact(input, &mut head, "header")?;
    if &head[..5] != CACHE_MAGIC {
        return Err(SnnError::format(format!("bad cache magic {:?}", &head[..5])));
    }
    let u = |i: usize| u32::from_le_bytes(head[7 + 4 * i..11 + 4 * i].try_into().unwrap());
    Ok(CacheHeader {
        seq_id: head[5],
        num_classes: head[6],
        count: u(0),
        window: u(1),
        channels: u(2),
        height: u(3),
        width: u(4),
    })
}

pub fn read_cache_from<R: Read>(mut input: R) -> Result<(CacheHeader, Vec<SequenceSample>)> {
    let header = read_cache_header(&mut input)?;
    let shape = header.frame_shape();
    let mut bytes = vec![0u8; 1 + 4 * header.frame_len()];
    let mut samples = Vec::with_capacity(header.count as usize);
    for i in 0..header.count {
        read_exact(&mut input, &mut bytes, &format!("sample {i}"))?;
        let label = bytes[0] as usize;
        if label >= header.num_classes as usize {
            return Err(SnnError::format(format!("sample {i}: label {label} outside {} classes", header.num_classes)));
        }
        let data = bytes[1..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        samples.push(SequenceSample {
            frames: Tensor::new(&shape, data)?,
            label,
            meta: SampleMeta {
                seq_id: header.seq_id,
                digit: if matches!(header.seq_id, 0 | 4 | NMNIST_SEQ_ID) { label as u8 } else { (label / 2) as u8 },
                variant: if matches!(header.seq_id, 1 | 2 | 3 | 5) && label % 2 == 1 { Variant::B } else { Variant::A },
                seed: 0,
                theta: None,
                masks: Vec::new(),
            },
        });
    }
    Ok((header, samples))
}

pub fn read_cache(path: &Path) -> Result<(CacheHeader, Vec<SequenceSample>)> {
    let file = File::open(path).map_err(|e| SnnError::path(path, e))?;
    read_cache_from(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(label: usize, fill: f32) -> SequenceSample {
        SequenceSample {
            frames: Tensor::full(&[2, 1, 3, 3], fill),
            label,
            meta: SampleMeta {
                seq_id: 4,
                digit: label as u8,
                variant: Variant::A,
                seed: 0,
                theta: None,
                masks: vec![],
            },
        }
    }

    fn header(count: u32) -> CacheHeader {
        CacheHeader {
            seq_id: 4,
            num_classes: 10,
            count,
            window: 2,
            channels: 1,
            height: 3,
            width: 3,
        }
    }

    #[test]
    fn round_trip() {
        let mut w = CacheWriter::new(Vec::new(), header(2)).unwrap();
        w.push(&sample(3, 0.25)).unwrap();
        w.push(&sample(9, 1.0)).unwrap();
        let bytes = w.finish().unwrap();
        assert_eq!(bytes.len(), 27 + 2 * (1 + 18 * 4));
        let (h, samples) = read_cache_from(&bytes[..]).unwrap();
        assert_eq!(h, header(2));
        assert_eq!(samples[0].label, 3);
        assert_eq!(samples[1].frames, Tensor::full(&[2, 1, 3, 3], 1.0));
        assert!(matches!(read_cache_from(&bytes[..bytes.len() - 2]), Err(SnnError::Format(_))));
    }

    #[test]
    fn writer_contracts() {
        let mut w = CacheWriter::new(Vec::new(), header(1)).unwrap();
        assert!(matches!(w.push(&sample(10, 0.0)), Err(SnnError::Contract(_))));
        let mut bad = sample(1, 0.0);
        bad.frames = Tensor::zeros(&[3, 1, 3, 3]);
        assert!(matches!(w.push(&bad), Err(SnnError::Dimension(_))));
        assert!(matches!(w.finish(), Err(SnnError::Contract(_))));
    }
}
