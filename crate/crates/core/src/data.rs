//! Dataset loading (MNIST IDX, CIFAR-10/100 binary), preprocessing and
//! shuffled mini-batch iteration.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor4;

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;
const CIFAR10_RECORD: usize = 3073; // label + 3*32*32
const CIFAR100_RECORD: usize = 3074; // coarse + fine + 3*32*32

/// In-memory labeled image set. Images are (N, C, H, W).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    preprocessed: bool,
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let (n, ..) = images.shape();
        if n != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        Ok(Self {
            images,
            labels,
            n_classes,
            preprocessed: false,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_preprocessed(&self) -> bool {
        self.preprocessed
    }

    /// First `n` examples, keeping preprocessing state.
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let (_, c, h, w) = self.images.shape();
        let stride = c * h * w;
        let images = Tensor4::from_vec((n, c, h, w), self.images.data()[..n * stride].to_vec())?;
        Ok(Self {
            images,
            labels: self.labels[..n].to_vec(),
            n_classes: self.n_classes,
            preprocessed: self.preprocessed,
        })
    }
}

fn format_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(offset as u64, "file truncated while reading u32"))
}

/// Loads MNIST from the published IDX pair (big-endian magics 2051/2049).
/// Pixels come out as raw 0-255 reals; run preprocessing separately.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;

    let magic = read_u32_be(&img_bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(0, format!("bad image magic {magic}, expected {IDX_IMAGES_MAGIC}")));
    }
    let n = read_u32_be(&img_bytes, 4)? as usize;
    let rows = read_u32_be(&img_bytes, 8)? as usize;
    let cols = read_u32_be(&img_bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if img_bytes.len() < expected {
        return Err(format_err(
            img_bytes.len() as u64,
            format!("image file truncated: {} bytes, expected {expected}", img_bytes.len()),
        ));
    }

    let magic = read_u32_be(&lbl_bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(0, format!("bad label magic {magic}, expected {IDX_LABELS_MAGIC}")));
    }
    let n_labels = read_u32_be(&lbl_bytes, 4)? as usize;
    if n_labels != n {
        return Err(format_err(4, format!("{n} images but {n_labels} labels")));
    }
    if lbl_bytes.len() < 8 + n {
        return Err(format_err(
            lbl_bytes.len() as u64,
            format!("label file truncated: {} bytes, expected {}", lbl_bytes.len(), 8 + n),
        ));
    }

    let data: Vec<f64> = img_bytes[16..16 + n * rows * cols]
        .iter()
        .map(|&b| b as f64)
        .collect();
    let images = Tensor4::from_vec((n, 1, rows, cols), data)?;
    let labels: Vec<usize> = lbl_bytes[8..8 + n].iter().map(|&b| b as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(format_err(8, format!("label {bad} out of range 0-9")));
    }
    Dataset::new(images, labels, 10)
}

/// Loads CIFAR-10 binary batches (3073-byte records: label + RGB planes).
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::Param("no CIFAR-10 batch files given".into()));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let bytes = fs::read(path.as_ref())?;
        if bytes.len() % CIFAR10_RECORD != 0 {
            return Err(format_err(
                bytes.len() as u64,
                format!("size {} is not a multiple of the {CIFAR10_RECORD}-byte record", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(CIFAR10_RECORD) {
            let label = rec[0] as usize;
            if label > 9 {
                return Err(format_err(0, format!("label {label} out of range 0-9")));
            }
            labels.push(label);
            pixels.extend(rec[1..].iter().map(|&b| b as f64));
        }
    }
    let n = labels.len();
    let images = Tensor4::from_vec((n, 3, 32, 32), pixels)?;
    Dataset::new(images, labels, 10)
}

/// Loads CIFAR-100 (3074-byte records: coarse label, fine label, RGB planes).
/// Uses the fine label.
pub fn load_cifar100(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.len() % CIFAR100_RECORD != 0 {
        return Err(format_err(
            bytes.len() as u64,
            format!("size {} is not a multiple of the {CIFAR100_RECORD}-byte record", bytes.len()),
        ));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for rec in bytes.chunks_exact(CIFAR100_RECORD) {
        let fine = rec[1] as usize;
        if fine > 99 {
            return Err(format_err(1, format!("fine label {fine} out of range 0-99")));
        }
        labels.push(fine);
        pixels.extend(rec[2..].iter().map(|&b| b as f64));
    }
    let n = labels.len();
    let images = Tensor4::from_vec((n, 3, 32, 32), pixels)?;
    Dataset::new(images, labels, 100)
}

/// Scales pixels to [0, 1]. Refuses to run twice.
pub fn preprocess_mnist(ds: &mut Dataset) -> Result<()> {
    if ds.preprocessed {
        return Err(Error::Precondition("dataset already preprocessed".into()));
    }
    ds.images = ds.images.map(|v| v / 255.0);
    ds.preprocessed = true;
    Ok(())
}

/// Scales pixels to [0, 1] and subtracts per-channel means.
///
/// With `means = None` the means are computed from this dataset (the training
/// split) and returned; pass them back in for the test split so no test-set
/// statistics leak into preprocessing.
pub fn preprocess_cifar(ds: &mut Dataset, means: Option<&[f64]>) -> Result<Vec<f64>> {
    if ds.preprocessed {
        return Err(Error::Precondition("dataset already preprocessed".into()));
    }
    let (n, c, h, w) = ds.images.shape();
    ds.images = ds.images.map(|v| v / 255.0);
    let means = match means {
        Some(m) => {
            if m.len() != c {
                return Err(Error::ShapeMismatch(format!(
                    "{} means for {c} channels",
                    m.len()
                )));
            }
            m.to_vec()
        }
        None => {
            let mut sums = vec![0.0; c];
            for b in 0..n {
                for ci in 0..c {
                    for hi in 0..h {
                        for wi in 0..w {
                            sums[ci] += ds.images.get(b, ci, hi, wi);
                        }
                    }
                }
            }
            let denom = (n * h * w) as f64;
            sums.iter().map(|s| s / denom).collect()
        }
    };
    for b in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    let v = ds.images.get(b, ci, hi, wi) - means[ci];
                    ds.images.set(b, ci, hi, wi, v);
                }
            }
        }
    }
    ds.preprocessed = true;
    Ok(means)
}

/// Seeded shuffled mini-batches; the final short batch is emitted.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

pub fn batch_iter<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<BatchIter<'a>> {
    if batch_size < 1 {
        return Err(Error::Param("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    Ok(BatchIter {
        dataset,
        order,
        batch_size,
        cursor: 0,
    })
}

impl Iterator for BatchIter<'_> {
    type Item = (Tensor4, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;

        let (_, c, h, w) = self.dataset.images.shape();
        let stride = c * h * w;
        let mut data = Vec::with_capacity(idx.len() * stride);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(self.dataset.images.example(i));
            labels.push(self.dataset.labels[i]);
        }
        let images = Tensor4::from_vec((idx.len(), c, h, w), data).expect("batch shape");
        Some((images, labels))
    }
}
