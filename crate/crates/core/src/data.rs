//! Spike-train generators and the IDX reader.
//!
//! All generators take an explicit RNG and consume it in row-major order
//! (neuron by neuron, step by step within a neuron), one uniform draw per
//! entry. A spike is emitted when the draw is below the probability.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::snn::SpikeTrain;

/// The generator used everywhere a seed appears.
pub type SpikeRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SpikeRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn check_probability(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("{what} must be in [0, 1], got {p}")));
    }
    Ok(())
}

/// Independent Bernoulli(p) spikes.
pub fn bernoulli_train<R: Rng + ?Sized>(n_neurons: usize, n_steps: usize, p: f64, rng: &mut R) -> Result<SpikeTrain> {
    check_probability(p, "spike probability")?;
    let data = (0..n_neurons * n_steps)
        .map(|_| u8::from(rng.random::<f64>() < p))
        .collect();
    SpikeTrain::from_vec(n_neurons, n_steps, data)
}

/// Rate coding: pixel `i` spikes with probability `pixel_i / 255 * p_max`
/// at every step.
pub fn rate_encode_image<R: Rng + ?Sized>(pixels: &[u8], n_steps: usize, p_max: f64, rng: &mut R) -> Result<SpikeTrain> {
    if !(p_max > 0.0 && p_max <= 1.0) {
        return Err(Error::InvalidParameter(format!("p_max must be in (0, 1], got {p_max}")));
    }
    let mut data = Vec::with_capacity(pixels.len() * n_steps);
    for &px in pixels {
        let p = f64::from(px) / 255.0 * p_max;
        data.extend((0..n_steps).map(|_| u8::from(rng.random::<f64>() < p)));
    }
    SpikeTrain::from_vec(pixels.len(), n_steps, data)
}

/// Regular target: neuron `class_idx` spikes at steps `period - 1`,
/// `2 * period - 1`, ...; all others are silent.
pub fn class_target_train(class_idx: usize, n_classes: usize, n_steps: usize, period: usize) -> Result<SpikeTrain> {
    if class_idx >= n_classes {
        return Err(Error::InvalidParameter(format!(
            "class index {class_idx} out of range for {n_classes} classes"
        )));
    }
    if period == 0 {
        return Err(Error::InvalidParameter("target period must be >= 1".into()));
    }
    let mut s = SpikeTrain::zeros(n_classes, n_steps);
    for t in (period - 1..n_steps).step_by(period) {
        s.set(class_idx, t, true);
    }
    Ok(s)
}

/// Index of the row with the most spikes, lowest index on ties.
pub fn decode_spike_count(output: &SpikeTrain) -> usize {
    let counts = output.row_counts();
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Grayscale images with their class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImages {
    pub rows: usize,
    pub cols: usize,
    /// `n_images x (rows * cols)`, row-major.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_size();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Copies images `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::InvalidParameter(format!(
                "subset {start}..{end} out of range for {} images",
                self.len()
            )));
        }
        let n = self.image_size();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[start * n..end * n].to_vec(),
            labels: self.labels[start..end].to_vec(),
        })
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            needed: offset + 4,
            available: bytes.len(),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

/// Parses an IDX3 image blob: magic, count, rows, cols, then raw bytes.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let needed = 16 + n * rows * cols;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            available: bytes.len(),
        });
    }
    Ok((n, rows, cols, bytes[16..needed].to_vec()))
}

/// Parses an IDX1 label blob: magic, count, then one byte per label.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let needed = 8 + n;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

pub fn load_idx(path_images: impl AsRef<Path>, path_labels: impl AsRef<Path>) -> Result<LabeledImages> {
    let (pi, pl) = (path_images.as_ref(), path_labels.as_ref());
    let image_bytes = read_file(pi)?;
    let label_bytes = read_file(pl)?;
    let (n, rows, cols, pixels) = parse_idx_images(&image_bytes, pi)?;
    let labels = parse_idx_labels(&label_bytes, pl)?;
    if n != labels.len() {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= 10) {
        return Err(Error::BadLabel { index, label });
    }
    Ok(LabeledImages {
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Serializes images and labels as an IDX3/IDX1 pair.
pub fn encode_idx(images: &LabeledImages) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.len() as u32, images.rows as u32, images.cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(&images.pixels);
    let mut lab = Vec::with_capacity(8 + images.len());
    for v in [LABEL_MAGIC, images.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&images.labels);
    (img, lab)
}
