//! Address-event streams: NMNIST decoding and stacking into binary frames.

use std::path::{Path, PathBuf};

use super::sequence::{SampleMeta, SequenceSample, Variant};
use crate::error::{Result, SnnError};
use crate::tensor::Tensor;

pub const NMNIST_SIDE: usize = 34;
pub const DEFAULT_EVENTS_PER_FRAME: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// 1 = ON, 0 = OFF.
    pub polarity: u8,
    /// Microseconds.
    pub t: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    /// `(width, height)`.
    pub resolution: (usize, usize),
}

/// Decodes 5-byte NMNIST records: x, y, then polarity in bit 7 and a
/// 23-bit timestamp.
pub fn decode_nmnist(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() % 5 != 0 {
        return Err(SnnError::format(format!("{} bytes is not a whole number of 5-byte records", bytes.len())));
    }
    let events = bytes
        .chunks_exact(5)
        .enumerate()
        .map(|(i, r)| {
            let (x, y) = (r[0], r[1]);
            if x as usize >= NMNIST_SIDE || y as usize >= NMNIST_SIDE {
                return Err(SnnError::format(format!("record {i}: coordinate ({x}, {y}) outside 34x34")));
            }
            Ok(Event {
                x: x as u16,
                y: y as u16,
                polarity: r[2] >> 7,
                t: ((r[2] as u32 & 0x7f) << 16) | ((r[3] as u32) << 8) | r[4] as u32,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EventStream {
        events,
        resolution: (NMNIST_SIDE, NMNIST_SIDE),
    })
}

pub fn load_nmnist(bin_path: &Path) -> Result<EventStream> {
    let bytes = std::fs::read(bin_path).map_err(|e| SnnError::path(bin_path, e))?;
    decode_nmnist(&bytes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackedEvents {
    /// `[window, 2, H, W]`, binary.
    pub frames: Tensor<f32>,
    /// Set when the stream held no events at all.
    pub empty: bool,
}

/// Consecutive chunks of `events_per_frame` events become one frame; a
/// pixel of a polarity channel is 1 if any event of that polarity hit it.
pub fn stack_events(stream: &EventStream, events_per_frame: usize, window: usize) -> Result<StackedEvents> {
    if events_per_frame == 0 {
        return Err(SnnError::param("events_per_frame must be at least 1"));
    }
    let (w, h) = stream.resolution;
    let mut frames = Tensor::<f32>::zeros(&[window, 2, h, w]);
    for (k, chunk) in stream.events.chunks(events_per_frame).take(window).enumerate() {
        let frame = frames.row_mut(k);
        for e in chunk {
            let (x, y) = (e.x as usize, e.y as usize);
            if x >= w || y >= h || e.polarity > 1 {
                return Err(SnnError::format(format!("event {e:?} outside a {w}x{h} sensor")));
            }
            frame[(e.polarity as usize * h + y) * w + x] = 1.0;
        }
    }
    Ok(StackedEvents {
        frames,
        empty: stream.events.is_empty(),
    })
}

/// Zero-pads the two trailing axes of `[.., H, W]` frames, centred, to `side`.
pub fn pad_frames(frames: &Tensor<f32>, side: usize) -> Result<Tensor<f32>> {
    let nd = frames.ndim();
    if nd < 2 {
        return Err(SnnError::dim("pad_frames needs [.., H, W]"));
    }
    let (h, w) = (frames.shape()[nd - 2], frames.shape()[nd - 1]);
    if side < h || side < w {
        return Err(SnnError::dim(format!("cannot pad {h}x{w} down to {side}")));
    }
    let (top, left) = ((side - h) / 2, (side - w) / 2);
    let planes = frames.len() / (h * w);
    let mut out = vec![0.0f32; planes * side * side];
    for p in 0..planes {
        for y in 0..h {
            let src = &frames.data()[(p * h + y) * w..(p * h + y + 1) * w];
            let dst = (p * side + top + y) * side + left;
            out[dst..dst + w].copy_from_slice(src);
        }
    }
    let mut shape = frames.shape().to_vec();
    shape[nd - 2] = side;
    shape[nd - 1] = side;
    Tensor::new(&shape, out)
}

/// `.bin` files of an NMNIST split (`<root>/Train/<digit>/*.bin` or
/// `<root>/Test/...`), interleaved across digits so prefixes are balanced.
pub fn list_nmnist(root: &Path, train: bool) -> Result<Vec<(PathBuf, u8)>> {
    let split = root.join(if train { "Train" } else { "Test" });
    let mut per_digit = Vec::with_capacity(10);
    for d in 0..10u8 {
        let dir = split.join(d.to_string());
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| SnnError::path(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        per_digit.push(files);
    }
    let longest = per_digit.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for i in 0..longest {
        for (d, files) in per_digit.iter().enumerate() {
            if let Some(p) = files.get(i) {
                out.push((p.clone(), d as u8));
            }
        }
    }
    Ok(out)
}

/// Reads and stacks one NMNIST recording into a sample.
pub fn nmnist_sample(path: &Path, digit: u8, events_per_frame: usize, window: usize) -> Result<SequenceSample> {
    let stacked = stack_events(&load_nmnist(path)?, events_per_frame, window)?;
    if stacked.empty {
        log::warn!("{} holds no events", path.display());
    }
    Ok(SequenceSample {
        frames: stacked.frames,
        label: digit as usize,
        meta: SampleMeta {
            seq_id: 6,
            digit,
            variant: Variant::A,
            seed: 0,
            theta: None,
            masks: Vec::new(),
        },
    })
}
