//! MNIST ingestion, synthetic sequence generation, event streams and caches.

mod cache;
mod events;
mod mnist;
mod sequence;

use std::path::PathBuf;

pub use cache::{read_cache, read_cache_from, read_cache_header, CacheHeader, CacheWriter, CACHE_MAGIC, NMNIST_SEQ_ID};
pub use events::{
    decode_nmnist, list_nmnist, load_nmnist, nmnist_sample, pad_frames, stack_events, Event, EventStream,
    StackedEvents, DEFAULT_EVENTS_PER_FRAME, NMNIST_SIDE,
};
pub use mnist::{load_mnist, load_mnist_split, MnistSet, Split, IMAGES_MAGIC, LABELS_MAGIC};
pub use sequence::{
    gen_dataset, gen_sample, gen_sequence, num_classes, rotate_scale, sample_rng, static_sequence,
    variants_per_image, SampleMeta, SequenceSample, Variant, DEFAULT_SEQUENCE_WINDOW, MASK_SIDE, SIDE,
};

use crate::error::{Result, SnnError};

/// Random-access source of labelled sample windows.
pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_classes(&self) -> usize;

    /// `[window, C, H, W]` of every sample.
    fn frame_shape(&self) -> Vec<usize>;

    fn sample(&self, index: usize) -> Result<SequenceSample>;

    fn label(&self, index: usize) -> Result<usize> {
        Ok(self.sample(index)?.label)
    }
}

/// Samples held in memory.
#[derive(Clone, Debug)]
pub struct InMemory {
    pub samples: Vec<SequenceSample>,
    pub num_classes: usize,
}

impl InMemory {
    pub fn new(samples: Vec<SequenceSample>, num_classes: usize) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Ok(Self { samples, num_classes });
        };
        let shape = first.frames.shape().to_vec();
        for (i, s) in samples.iter().enumerate() {
            if s.frames.shape() != shape {
                return Err(SnnError::dim(format!("sample {i} frames {:?} differ from {shape:?}", s.frames.shape())));
            }
            if s.label >= num_classes {
                return Err(SnnError::contract(format!("sample {i} label {} outside {num_classes} classes", s.label)));
            }
        }
        Ok(Self { samples, num_classes })
    }
}

impl Dataset for InMemory {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn frame_shape(&self) -> Vec<usize> {
        self.samples.first().map(|s| s.frames.shape().to_vec()).unwrap_or_default()
    }

    fn sample(&self, index: usize) -> Result<SequenceSample> {
        self.samples
            .get(index)
            .cloned()
            .ok_or_else(|| SnnError::param(format!("sample {index} out of range")))
    }

    fn label(&self, index: usize) -> Result<usize> {
        self.samples
            .get(index)
            .map(|s| s.label)
            .ok_or_else(|| SnnError::param(format!("sample {index} out of range")))
    }
}

/// Synthetic sequences generated on demand from MNIST images.
#[derive(Clone, Debug)]
pub struct Synthetic {
    seq_id: u8,
    images: MnistSet,
    seed: u64,
    window: usize,
    len: usize,
}

impl Synthetic {
    pub fn new(seq_id: u8, images: MnistSet, seed: u64, window: usize) -> Result<Self> {
        num_classes(seq_id)?;
        if window == 0 {
            return Err(SnnError::param("window must be at least 1"));
        }
        let len = images.len() * variants_per_image(seq_id);
        Ok(Self {
            seq_id,
            images,
            seed,
            window,
            len,
        })
    }

    /// Keeps the first `n` samples.
    pub fn limit(mut self, n: usize) -> Self {
        self.len = self.len.min(n);
        let per = variants_per_image(self.seq_id);
        self.images = self.images.truncate(self.len.div_ceil(per));
        self
    }

    pub fn seq_id(&self) -> u8 {
        self.seq_id
    }
}

impl Dataset for Synthetic {
    fn len(&self) -> usize {
        self.len
    }

    fn num_classes(&self) -> usize {
        num_classes(self.seq_id).expect("validated in new")
    }

    fn frame_shape(&self) -> Vec<usize> {
        vec![self.window, 1, SIDE, SIDE]
    }

    fn sample(&self, index: usize) -> Result<SequenceSample> {
        if index >= self.len {
            return Err(SnnError::param(format!("sample {index} out of range")));
        }
        gen_sample(self.seq_id, &self.images, index, self.seed, self.window)
    }

    fn label(&self, index: usize) -> Result<usize> {
        let per = variants_per_image(self.seq_id);
        let digit = self.images.label(index / per) as usize;
        Ok(if per == 2 { digit * 2 + index % 2 } else { digit })
    }
}

/// NMNIST recordings read and stacked on demand.
#[derive(Clone, Debug)]
pub struct NmnistFiles {
    pub files: Vec<(PathBuf, u8)>,
    pub events_per_frame: usize,
    pub window: usize,
    /// Pad frames to this side length.
    pub pad_to: Option<usize>,
}

impl Dataset for NmnistFiles {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn num_classes(&self) -> usize {
        10
    }

    fn frame_shape(&self) -> Vec<usize> {
        let side = self.pad_to.unwrap_or(NMNIST_SIDE);
        vec![self.window, 2, side, side]
    }

    fn sample(&self, index: usize) -> Result<SequenceSample> {
        let (path, digit) = self
            .files
            .get(index)
            .ok_or_else(|| SnnError::param(format!("sample {index} out of range")))?;
        let mut s = nmnist_sample(path, *digit, self.events_per_frame, self.window)?;
        if let Some(side) = self.pad_to {
            s.frames = pad_frames(&s.frames, side)?;
        }
        Ok(s)
    }

    fn label(&self, index: usize) -> Result<usize> {
        Ok(self.files[index].1 as usize)
    }
}

/// Generation seed of a split, so train and test never share sample streams.
pub fn split_seed(seed: u64, split: Split) -> u64 {
    seed.wrapping_mul(2).wrapping_add(matches!(split, Split::Test) as u64)
}
