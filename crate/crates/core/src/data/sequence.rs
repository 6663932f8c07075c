//! Synthetic spatio-temporal sequences built from single MNIST digits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SnnError};
use crate::tensor::Tensor;

pub const SIDE: usize = 28;
pub const MASK_SIDE: usize = 14;
pub const DEFAULT_SEQUENCE_WINDOW: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Zoom in, or clockwise rotation.
    A,
    /// Zoom out, or counter-clockwise rotation.
    B,
}

impl Variant {
    pub fn index(self) -> usize {
        match self {
            Variant::A => 0,
            Variant::B => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    /// 0 = static digit, 1..=5 synthetic sequences, 6 = event data.
    pub seq_id: u8,
    pub digit: u8,
    pub variant: Variant,
    pub seed: u64,
    /// Total rotation of a seq-5 sample, degrees.
    pub theta: Option<f64>,
    /// Top-left corners of the seq-4 occluder, one per frame.
    pub masks: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    /// `[window, C, H, W]`, values in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub label: usize,
    pub meta: SampleMeta,
}

/// Class count of a synthetic sequence.
pub fn num_classes(seq_id: u8) -> Result<usize> {
    match seq_id {
        0 | 4 => Ok(10),
        1 | 2 | 3 | 5 => Ok(20),
        other => Err(SnnError::param(format!("unknown sequence id {other}"))),
    }
}

/// Samples per source image.
pub fn variants_per_image(seq_id: u8) -> usize {
    if matches!(seq_id, 1 | 2 | 3 | 5) {
        2
    } else {
        1
    }
}

/// Bilinear sample with zero background.
fn bilinear(img: &[f32], x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= SIDE as f64 || yi >= SIDE as f64 {
            0.0
        } else {
            img[yi as usize * SIDE + xi as usize] as f64
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + if fx > 0.0 { at(x0 + 1.0, y0) * fx } else { 0.0 };
    if fy == 0.0 {
        return top;
    }
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + if fx > 0.0 { at(x0 + 1.0, y0 + 1.0) * fx } else { 0.0 };
    top * (1.0 - fy) + bottom * fy
}

/// Rotates by `degrees` (clockwise on screen for positive angles) and scales
/// by `scale` about the image centre, via inverse mapping.
pub fn rotate_scale(img: &[f32], degrees: f64, scale: f64) -> Vec<f32> {
    let c = (SIDE as f64 - 1.0) / 2.0;
    let (s, co) = degrees.to_radians().sin_cos();
    let mut out = vec![0.0f32; SIDE * SIDE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let sx = (co * dx + s * dy) / scale + c;
            let sy = (-s * dx + co * dy) / scale + c;
            out[y * SIDE + x] = bilinear(img, sx, sy).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

fn stack(frames: Vec<Vec<f32>>) -> Result<Tensor<f32>> {
    let n = frames.len();
    Tensor::new(&[n, 1, SIDE, SIDE], frames.concat())
}

/// Zoom factor of frame `k` (1-based) out of `n` for sequences 1 and 3.
fn zoom(seq_id: u8, k: usize, n: usize, variant: Variant) -> f64 {
    let j = match variant {
        Variant::A => k,
        Variant::B => n + 1 - k,
    };
    if seq_id == 1 {
        j as f64 / n as f64
    } else if n == 1 {
        1.0
    } else {
        0.5 + 0.5 * (j - 1) as f64 / (n - 1) as f64
    }
}

/// Builds one synthetic sequence of `window` frames from a 28x28 image.
pub fn gen_sequence<R: Rng + ?Sized>(
    seq_id: u8,
    image: &[f32],
    digit: u8,
    variant: Variant,
    window: usize,
    rng: &mut R,
) -> Result<SequenceSample> {
    if !(1..=5).contains(&seq_id) {
        return Err(SnnError::param(format!("sequence id {seq_id} outside 1..5")));
    }
    if image.len() != SIDE * SIDE {
        return Err(SnnError::dim(format!("expected a 28x28 image, got {} pixels", image.len())));
    }
    if window == 0 {
        return Err(SnnError::param("window must be at least 1"));
    }
    let sign = match variant {
        Variant::A => 1.0,
        Variant::B => -1.0,
    };
    let mut meta = SampleMeta {
        seq_id,
        digit,
        variant,
        seed: 0,
        theta: None,
        masks: Vec::new(),
    };
    let n = window;
    let frames: Vec<Vec<f32>> = match seq_id {
        1 | 3 => (1..=n).map(|k| rotate_scale(image, 0.0, zoom(seq_id, k, n, variant))).collect(),
        2 => (1..=n)
            .map(|k| rotate_scale(image, sign * 360.0 * k as f64 / n as f64, 1.0))
            .collect(),
        4 => (0..n)
            .map(|_| {
                let (r0, c0) = (rng.gen_range(0..=SIDE - MASK_SIDE), rng.gen_range(0..=SIDE - MASK_SIDE));
                meta.masks.push((r0, c0));
                let mut f = image.to_vec();
                for r in r0..r0 + MASK_SIDE {
                    f[r * SIDE + c0..r * SIDE + c0 + MASK_SIDE].fill(0.0);
                }
                f
            })
            .collect(),
        5 => {
            let theta = rng.gen_range(0.0..360.0);
            meta.theta = Some(theta);
            (1..=n)
                .map(|k| rotate_scale(image, sign * theta * k as f64 / n as f64, 1.0))
                .collect()
        }
        _ => unreachable!(),
    };
    let label = if seq_id == 4 {
        digit as usize
    } else {
        digit as usize * 2 + variant.index()
    };
    Ok(SequenceSample {
        frames: stack(frames)?,
        label,
        meta,
    })
}

/// The digit repeated unchanged over the window (sequence 0).
pub fn static_sequence(image: &[f32], digit: u8, window: usize) -> Result<SequenceSample> {
    Ok(SequenceSample {
        frames: stack(vec![image.to_vec(); window])?,
        label: digit as usize,
        meta: SampleMeta {
            seq_id: 0,
            digit,
            variant: Variant::A,
            seed: 0,
            theta: None,
            masks: Vec::new(),
        },
    })
}

/// Generator for sample `index` of a dataset, seeded by `(seed, index)`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Sample `index` of sequence `seq_id` over `images`: sample `i` uses image
/// `i / variants` and variant `i % variants`.
pub fn gen_sample(
    seq_id: u8,
    images: &super::MnistSet,
    index: usize,
    seed: u64,
    window: usize,
) -> Result<SequenceSample> {
    num_classes(seq_id)?;
    let per = variants_per_image(seq_id);
    let img_idx = index / per;
    if img_idx >= images.len() {
        return Err(SnnError::param(format!("sample {index} beyond the {} images", images.len())));
    }
    let image = images.image(img_idx);
    let digit = images.label(img_idx);
    let mut sample = if seq_id == 0 {
        static_sequence(&image, digit, window)?
    } else {
        let variant = if index % per == 0 { Variant::A } else { Variant::B };
        gen_sequence(seq_id, &image, digit, variant, window, &mut sample_rng(seed, index as u64))?
    };
    sample.meta.seed = seed;
    Ok(sample)
}

/// Every sample of a sequence over `images`, in index order.
pub fn gen_dataset(seq_id: u8, images: &super::MnistSet, seed: u64, window: usize) -> Result<Vec<SequenceSample>> {
    let count = images.len() * variants_per_image(seq_id);
    (0..count).map(|i| gen_sample(seq_id, images, i, seed, window)).collect()
}
