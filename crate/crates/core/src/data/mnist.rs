//! IDX-format MNIST reader.

use std::path::{Path, PathBuf};

use crate::error::{Result, SnnError};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw bytes of an MNIST split; pixels are normalised on access.
#[derive(Clone, Debug, PartialEq)]
pub struct MnistSet {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| SnnError::format(format!("{what}: header truncated")))
}

impl MnistSet {
    /// Parses in-memory IDX image and label files.
    pub fn from_idx(images: &[u8], labels: &[u8]) -> Result<Self> {
        let magic = be_u32(images, 0, "images")?;
        if magic != IMAGES_MAGIC {
            return Err(SnnError::format(format!("images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
        }
        let magic = be_u32(labels, 0, "labels")?;
        if magic != LABELS_MAGIC {
            return Err(SnnError::format(format!("labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
        }
        let count = be_u32(images, 4, "images")? as usize;
        let rows = be_u32(images, 8, "images")? as usize;
        let cols = be_u32(images, 12, "images")? as usize;
        let label_count = be_u32(labels, 4, "labels")? as usize;
        if label_count != count {
            return Err(SnnError::format(format!("{count} images but {label_count} labels")));
        }
        let body = &images[16..];
        if body.len() < count * rows * cols {
            return Err(SnnError::format(format!(
                "images truncated: {} of {} pixel bytes",
                body.len(),
                count * rows * cols
            )));
        }
        let lbody = &labels[8..];
        if lbody.len() < count {
            return Err(SnnError::format(format!("labels truncated: {} of {count}", lbody.len())));
        }
        Ok(Self {
            pixels: body[..count * rows * cols].to_vec(),
            labels: lbody[..count].to_vec(),
            rows,
            cols,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Image `i` scaled to `[0, 1]`, row-major.
    pub fn image(&self, i: usize) -> Vec<f32> {
        let n = self.rows * self.cols;
        self.pixels[i * n..(i + 1) * n].iter().map(|&p| p as f32 / 255.0).collect()
    }

    /// The first `n` samples (all of them if `n` exceeds the split).
    pub fn truncate(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.pixels.truncate(n * self.rows * self.cols);
        self
    }
}

pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<MnistSet> {
    let images = std::fs::read(images_path).map_err(|e| SnnError::path(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| SnnError::path(labels_path, e))?;
    MnistSet::from_idx(&images, &labels)
}

/// Loads a split from a directory holding the standard uncompressed files.
pub fn load_mnist_split(dir: &Path, split: Split) -> Result<MnistSet> {
    let (images, labels) = split.file_names();
    let (ip, lp): (PathBuf, PathBuf) = (dir.join(images), dir.join(labels));
    load_mnist(&ip, &lp)
}
