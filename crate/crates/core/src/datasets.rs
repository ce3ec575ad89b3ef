//! Dataset loading (MNIST IDX, CIFAR-10 binary), synthetic blobs, seeded
//! stratified splits and per-sample visit counters.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR10_RECORD_LEN: usize = 3073;
pub const CIFAR10_PIXELS: usize = 3072;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated file ({len} bytes, need {needed})")]
    Truncated {
        path: PathBuf,
        len: usize,
        needed: usize,
    },
    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: length {len} is not a multiple of {CIFAR10_RECORD_LEN}")]
    RecordLength { path: PathBuf, len: usize },
    #[error("{path}: label {label} at record {index} exceeds 9")]
    BadLabel {
        path: PathBuf,
        index: usize,
        label: u8,
    },
    #[error("insufficient samples: requested {requested}, available {available}")]
    InsufficientSamples { requested: usize, available: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, DatasetError>;

/// A labelled feature matrix, row-major `n x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Stable identifiers inherited from the parent dataset.
    pub sample_ids: Vec<u64>,
    pub dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        let ds = Dataset {
            name: name.into(),
            features,
            labels,
            sample_ids: (0..n as u64).collect(),
            dim,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.dim == 0 || self.features.len() != n * self.dim {
            return Err(DatasetError::Invalid(format!(
                "{} features for {} rows of width {}",
                self.features.len(),
                n,
                self.dim
            )));
        }
        if self.sample_ids.len() != n {
            return Err(DatasetError::Invalid("sample_ids length differs from row count".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(DatasetError::Invalid(format!(
                "label {bad} outside [0, {})",
                self.num_classes
            )));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(DatasetError::Invalid("non-finite feature".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `indices` of this dataset, keeping their sample ids.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            name: self.name.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Concatenates datasets of equal width, renumbering sample ids.
    pub fn concat(name: impl Into<String>, parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| DatasetError::Invalid("nothing to concatenate".into()))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim != first.dim {
                return Err(DatasetError::Invalid("feature widths differ".into()));
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        let num_classes = parts.iter().map(|p| p.num_classes).max().unwrap_or(0);
        Dataset::new(name, features, labels, first.dim, num_classes)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn need(path: &Path, bytes: &[u8], needed: usize) -> Result<()> {
    if bytes.len() < needed {
        return Err(DatasetError::Truncated {
            path: path.to_path_buf(),
            len: bytes.len(),
            needed,
        });
    }
    Ok(())
}

/// Parsed IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    need(path, bytes, 16)?;
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(DatasetError::BadMagic {
            path: path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let len = n * rows * cols;
    need(path, bytes, 16 + len)?;
    Ok((n, rows, cols, bytes[16..16 + len].to_vec()))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    need(path, bytes, 8)?;
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(DatasetError::BadMagic {
            path: path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4) as usize;
    need(path, bytes, 8 + n)?;
    Ok(bytes[8..8 + n].to_vec())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len() % (rows * cols), 0);
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an MNIST image/label IDX pair; pixels are scaled by 1/255.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images, &read_file(images)?)?;
    let label_bytes = parse_idx_labels(labels, &read_file(labels)?)?;
    if label_bytes.len() != n {
        return Err(DatasetError::CountMismatch {
            images: n,
            labels: label_bytes.len(),
        });
    }
    let num_classes = label_bytes.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    Dataset::new(
        "mnist",
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        label_bytes.iter().map(|&l| l as usize).collect(),
        rows * cols,
        num_classes,
    )
}

/// Records of one label byte followed by 3072 pixel bytes.
pub fn parse_cifar10(path: &Path, bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.is_empty() || bytes.len() % CIFAR10_RECORD_LEN != 0 {
        return Err(DatasetError::RecordLength {
            path: path.to_path_buf(),
            len: bytes.len(),
        });
    }
    let n = bytes.len() / CIFAR10_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR10_PIXELS);
    for (index, record) in bytes.chunks_exact(CIFAR10_RECORD_LEN).enumerate() {
        if record[0] > 9 {
            return Err(DatasetError::BadLabel {
                path: path.to_path_buf(),
                index,
                label: record[0],
            });
        }
        labels.push(record[0]);
        pixels.extend_from_slice(&record[1..]);
    }
    Ok((labels, pixels))
}

pub fn encode_cifar10(labels: &[u8], pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), labels.len() * CIFAR10_PIXELS);
    let mut out = Vec::with_capacity(labels.len() * CIFAR10_RECORD_LEN);
    for (l, px) in labels.iter().zip(pixels.chunks_exact(CIFAR10_PIXELS)) {
        out.push(*l);
        out.extend_from_slice(px);
    }
    out
}

/// Loads and concatenates CIFAR-10 binary batch files in the given order.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut features = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let (l, px) = parse_cifar10(path, &read_file(path)?)?;
        labels.extend(l.into_iter().map(|x| x as usize));
        features.extend(px.into_iter().map(|p| p as f64 / 255.0));
    }
    if labels.is_empty() {
        return Err(DatasetError::Invalid("no CIFAR-10 batch files given".into()));
    }
    Dataset::new("cifar10", features, labels, CIFAR10_PIXELS, 10)
}

/// Orthonormal directions by Gram-Schmidt on Gaussian vectors.
fn orthonormal_directions(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    while dirs.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for u in &dirs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            dirs.push(v);
        }
    }
    dirs
}

/// Gaussian class blobs with unit variance. Class means sit on random
/// orthonormal directions scaled so that every pair of means is
/// `separation` apart. Labels cycle through the classes before shuffling,
/// so class sizes differ by at most one.
pub fn synthetic(n: usize, dim: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < classes {
        return Err(DatasetError::Invalid(format!(
            "need n >= classes >= 2, got n={n}, classes={classes}"
        )));
    }
    if classes > dim {
        return Err(DatasetError::Invalid(format!(
            "{classes} orthogonal class directions need dim >= classes, got {dim}"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(DatasetError::Invalid("separation must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = orthonormal_directions(classes, dim, &mut rng)
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * radius).collect())
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * dim);
    for &l in &labels {
        for m in &means[l] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(m + z);
        }
    }
    Dataset::new("synthetic", features, labels, dim, classes)
}

/// Splits `take` across classes as evenly as availability allows:
/// classes are filled in increasing order of availability, each taking at
/// most an equal share of what is left.
fn balanced_quotas(available: &[usize], take: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..available.len()).collect();
    order.sort_by_key(|&c| (available[c], c));
    let mut quotas = vec![0; available.len()];
    let mut remaining = take;
    for (pos, &c) in order.iter().enumerate() {
        let left = order.len() - pos;
        let share = remaining / left + usize::from(remaining % left != 0);
        let q = share.min(available[c]);
        quotas[c] = q;
        remaining -= q;
    }
    // Rounding up can starve the largest classes; hand them the rest.
    for &c in order.iter().rev() {
        if remaining == 0 {
            break;
        }
        let extra = (available[c] - quotas[c]).min(remaining);
        quotas[c] += extra;
        remaining -= extra;
    }
    quotas
}

/// Seeded, disjoint, class-stratified train/validation split.
///
/// Each split draws as equally across classes as availability permits, so
/// a balanced parent yields class counts within one of each other. The
/// outputs keep the parent's sample ids and are shuffled.
pub fn subset(ds: &Dataset, n_train: usize, n_valid: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train + n_valid > ds.len() {
        return Err(DatasetError::InsufficientSamples {
            requested: n_train + n_valid,
            available: ds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
    }

    let mut draw = |take: usize, pools: &mut Vec<Vec<usize>>| -> Vec<usize> {
        let available: Vec<usize> = pools.iter().map(Vec::len).collect();
        let quotas = balanced_quotas(&available, take);
        let mut picked = Vec::with_capacity(take);
        for (pool, q) in pools.iter_mut().zip(quotas) {
            picked.extend(pool.drain(..q));
        }
        picked.shuffle(&mut rng);
        picked
    };
    let train_idx = draw(n_train, &mut by_class);
    let valid_idx = draw(n_valid, &mut by_class);
    Ok((ds.select(&train_idx), ds.select(&valid_idx)))
}

/// How many times each training row was included in a minibatch.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VisitCounter {
    pub counts: Vec<u64>,
}

impl VisitCounter {
    pub fn new(len: usize) -> Self {
        VisitCounter {
            counts: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Increments every listed row by its multiplicity in `batch`.
    pub fn record_visits(&mut self, batch: &[usize]) -> Result<()> {
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.counts.len()) {
            return Err(DatasetError::Invalid(format!(
                "sample index {bad} out of range for {} counters",
                self.counts.len()
            )));
        }
        for &i in batch {
            self.counts[i] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Elementwise addition of another shard of the same length.
    pub fn merge(&mut self, other: &VisitCounter) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(DatasetError::Invalid(format!(
                "cannot merge visit counters of lengths {} and {}",
                self.counts.len(),
                other.counts.len()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}
