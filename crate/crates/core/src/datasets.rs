//! MNIST IDX loading plus two synthetic datasets.
//!
//! Synthetic generators draw from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded
//! with `seed_from_u64`, so a seed fixes the dataset on every platform.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const ANOMALY_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Labelled samples with features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f32>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::dim(
                "Dataset::new",
                format!(
                    "{} feature values for {} samples of dim {input_dim}",
                    features.len(),
                    labels.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} with {num_classes} classes"
            )));
        }
        if let Some(i) = features.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "feature value {} at {i} outside [0, 1]",
                features[i]
            )));
        }
        Ok(Dataset {
            features,
            labels,
            input_dim,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f32] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn one_hot(&self, i: usize) -> Vec<f32> {
        let mut y = vec![0.0; self.num_classes];
        y[self.labels[i]] = 1.0;
        y
    }

    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.features.truncate(n * self.input_dim);
        }
    }

    /// First `len - round(len * test_fraction)` samples become the train
    /// split, the rest the test split.
    pub fn split_off_test(mut self, test_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test fraction must be in (0, 1), got {test_fraction}"
            )));
        }
        let test_len = ((self.len() as f64) * test_fraction).round() as usize;
        let train_len = self.len() - test_len;
        if train_len == 0 || test_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} samples cannot be split with test fraction {test_fraction}",
                self.len()
            )));
        }
        let test = Dataset {
            features: self.features.split_off(train_len * self.input_dim),
            labels: self.labels.split_off(train_len),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            split: Split::Test,
        };
        self.split = Split::Train;
        Ok((self, test))
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parsed IDX image file: `(count, rows, cols, pixels)` limited to `limit` images.
pub fn parse_idx_images(bytes: &[u8], limit: Option<usize>, path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let fmt = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let magic = be_u32(bytes, 0).ok_or_else(|| fmt("truncated IDX header".into()))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(fmt(format!(
            "bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let (count, rows, cols) = match (be_u32(bytes, 4), be_u32(bytes, 8), be_u32(bytes, 12)) {
        (Some(n), Some(r), Some(c)) => (n as usize, r as usize, c as usize),
        _ => return Err(fmt("truncated IDX header".into())),
    };
    let count = limit.map_or(count, |l| l.min(count));
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(fmt(format!(
            "truncated IDX image data: {} bytes, need {need}",
            bytes.len()
        )));
    }
    Ok((count, rows, cols, bytes[16..need].to_vec()))
}

/// Parsed IDX label file limited to `limit` labels.
pub fn parse_idx_labels(bytes: &[u8], limit: Option<usize>, path: &Path) -> Result<Vec<u8>> {
    let fmt = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let magic = be_u32(bytes, 0).ok_or_else(|| fmt("truncated IDX header".into()))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(fmt(format!(
            "bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }
    let count = be_u32(bytes, 4).ok_or_else(|| fmt("truncated IDX header".into()))? as usize;
    let count = limit.map_or(count, |l| l.min(count));
    if bytes.len() < 8 + count {
        return Err(fmt(format!(
            "truncated IDX label data: {} bytes, need {}",
            bytes.len(),
            8 + count
        )));
    }
    Ok(bytes[8..8 + count].to_vec())
}

pub fn write_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an MNIST image/label pair (raw or gzipped IDX), scaling pixels by 1/255.
pub fn load_mnist_idx(images: &Path, labels: &Path, limit: Option<usize>, split: Split) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images)?, limit, images)?;
    let label_bytes = parse_idx_labels(&read_maybe_gz(labels)?, limit, labels)?;
    if label_bytes.len() != count {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            detail: format!("{} labels for {count} images", label_bytes.len()),
        });
    }
    if let Some(&bad) = label_bytes.iter().find(|&&l| l > 9) {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            detail: format!("label {bad} is not a digit"),
        });
    }
    let features = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(
        features,
        label_bytes.into_iter().map(usize::from).collect(),
        rows * cols,
        10,
        split,
    )
}

/// Scales every feature column to `[0, 1]` over the given samples.
fn min_max_scale(features: &mut [f32], dim: usize) {
    for j in 0..dim {
        let (lo, hi) = features
            .iter()
            .skip(j)
            .step_by(dim)
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for v in features.iter_mut().skip(j).step_by(dim) {
            *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
}

// Fixed task geometry for the anomaly surrogate; only the samples depend on the seed.
const ANOMALY_GEOMETRY_SEED: u64 = 0x5eed_a11a;
const ANOMALY_SHIFT: f32 = 0.4;
const ANOMALY_SCALE: f32 = 1.25;

/// Two-class surrogate for machine-sound anomaly detection: 64-d Gaussians,
/// class 0 "normal" around a base mean, class 1 "anomaly" shifted by
/// `±0.4` per dimension and with 1.25x spread. Balanced (class 0 gets the
/// extra sample for odd `n`), shuffled, min-max scaled.
pub fn synth_anomaly(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument("anomaly dataset needs n >= 2".into()));
    }
    let mut geo = ChaCha8Rng::seed_from_u64(ANOMALY_GEOMETRY_SEED);
    let base: Vec<f32> = (0..ANOMALY_DIM).map(|_| geo.gen_range(-1.0..1.0)).collect();
    let shift: Vec<f32> = (0..ANOMALY_DIM)
        .map(|_| if geo.gen_bool(0.5) { ANOMALY_SHIFT } else { -ANOMALY_SHIFT })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n.div_ceil(2))).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * ANOMALY_DIM);
    for &label in &labels {
        for d in 0..ANOMALY_DIM {
            let noise: f32 = StandardNormal.sample(&mut rng);
            features.push(if label == 0 {
                base[d] + noise
            } else {
                base[d] + shift[d] + ANOMALY_SCALE * noise
            });
        }
    }
    min_max_scale(&mut features, ANOMALY_DIM);
    Dataset::new(features, labels, ANOMALY_DIM, 2, Split::Train)
}

const BLOB_RADIUS: f32 = 5.0;
const BLOB_SIGMA: f32 = 0.25;

/// 2-D Gaussian blobs with centres evenly spaced on a circle of radius 5 and
/// σ = 0.25, labels cycling through the classes, min-max scaled.
pub fn synth_blobs(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument("blobs need at least 2 classes".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("blobs need n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = std::f32::consts::TAU * c as f32 / classes as f32;
        let dx: f32 = StandardNormal.sample(&mut rng);
        let dy: f32 = StandardNormal.sample(&mut rng);
        features.push(BLOB_RADIUS * angle.cos() + BLOB_SIGMA * dx);
        features.push(BLOB_RADIUS * angle.sin() + BLOB_SIGMA * dy);
        labels.push(c);
    }
    min_max_scale(&mut features, 2);
    Dataset::new(features, labels, 2, classes, Split::Train)
}
