//! Datasets: CIFAR-10/100 binary loaders, normalisation, class-balanced
//! subsets, deterministic batching and small synthetic sets.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR10_RECORD: usize = 1 + CIFAR_PIXELS;
pub const CIFAR100_RECORD: usize = 2 + CIFAR_PIXELS;
pub const CIFAR_BATCH_RECORDS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: size {size} bytes, expected {expected}")]
    WrongSize {
        path: PathBuf,
        size: usize,
        expected: usize,
    },
    #[error("record {record}: label {label} is not below {classes}")]
    BadLabel {
        record: usize,
        label: usize,
        classes: usize,
    },
    #[error("class {class} has {have} samples, {need} requested")]
    InsufficientSamples {
        class: usize,
        have: usize,
        need: usize,
    },
    #[error("invalid dataset parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self, DataError> {
        if images.batch() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some((record, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::BadLabel {
                record,
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample feature shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = gather(self, indices);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }
}

fn gather(ds: &Dataset, indices: &[usize]) -> (Tensor, Vec<usize>) {
    let r = ds.images.row_len();
    let mut data = Vec::with_capacity(indices.len() * r);
    for &i in indices {
        data.extend_from_slice(ds.images.row(i));
    }
    let mut shape = ds.images.shape().to_vec();
    shape[0] = indices.len();
    (
        Tensor::new(shape, data),
        indices.iter().map(|&i| ds.labels[i]).collect(),
    )
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Decodes CIFAR records. `label_offset` picks the label byte inside the
/// `header`-byte prefix. Pixels are kept as raw byte values in `[0, 255]`.
pub fn parse_cifar_records(
    bytes: &[u8],
    header: usize,
    label_offset: usize,
    classes: usize,
    name: &str,
) -> Result<Dataset, DataError> {
    let record = header + CIFAR_PIXELS;
    if bytes.len() % record != 0 {
        return Err(DataError::WrongSize {
            path: PathBuf::from(name),
            size: bytes.len(),
            expected: bytes.len().div_ceil(record) * record,
        });
    }
    let n = bytes.len() / record;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_offset] as usize;
        if label >= classes {
            return Err(DataError::BadLabel {
                record: i,
                label,
                classes,
            });
        }
        labels.push(label);
        data.extend(rec[header..].iter().map(|&b| b as f64));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], data), labels, classes, name)
}

/// Inverse of [`parse_cifar_records`] for raw (unnormalised) datasets.
pub fn write_cifar_records(ds: &Dataset, header: usize, label_offset: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(ds.len() * (header + CIFAR_PIXELS));
    for i in 0..ds.len() {
        let mut head = vec![0u8; header];
        head[label_offset] = ds.labels[i] as u8;
        out.extend(head);
        out.extend(
            ds.images
                .row(i)
                .iter()
                .map(|&v| v.round().clamp(0.0, 255.0) as u8),
        );
    }
    out
}

fn load_files(
    dir: &Path,
    files: &[&str],
    header: usize,
    label_offset: usize,
    classes: usize,
    expected_records: Option<usize>,
    name: &str,
) -> Result<Dataset, DataError> {
    let record = header + CIFAR_PIXELS;
    let mut parts = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = read(&path)?;
        if let Some(n) = expected_records {
            if bytes.len() != n * record {
                return Err(DataError::WrongSize {
                    path,
                    size: bytes.len(),
                    expected: n * record,
                });
            }
        }
        parts.push(parse_cifar_records(
            &bytes,
            header,
            label_offset,
            classes,
            name,
        )?);
    }
    concat(parts, name)
}

fn concat(parts: Vec<Dataset>, name: &str) -> Result<Dataset, DataError> {
    let classes = parts.first().map_or(0, |p| p.num_classes);
    let shape = parts
        .first()
        .map(|p| p.sample_shape().to_vec())
        .unwrap_or_default();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for p in parts {
        labels.extend(p.labels);
        data.extend(p.images.into_data());
    }
    let full: Vec<usize> = std::iter::once(labels.len()).chain(shape).collect();
    Dataset::new(Tensor::new(full, data), labels, classes, name)
}

/// `data_batch_{1..5}.bin` and `test_batch.bin`, each exactly 10000 records.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset), DataError> {
    let dir = dir.as_ref();
    let train_files = [
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
    ];
    let n = Some(CIFAR_BATCH_RECORDS);
    let train = load_files(dir, &train_files, 1, 0, 10, n, "cifar10-train")?;
    let test = load_files(dir, &["test_batch.bin"], 1, 0, 10, n, "cifar10-test")?;
    Ok((train, test))
}

/// `train.bin` (50000 records) and `test.bin` (10000), fine labels.
pub fn load_cifar100(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset), DataError> {
    let dir = dir.as_ref();
    let train = load_files(
        dir,
        &["train.bin"],
        2,
        1,
        100,
        Some(50_000),
        "cifar100-train",
    )?;
    let test = load_files(dir, &["test.bin"], 2, 1, 100, Some(10_000), "cifar100-test")?;
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `x / 127.5 - 1`, bytes onto `[-1, 1]`.
    UnitInterval,
    /// Per-channel standardisation with statistics from the reference set.
    PerChannelStandardize,
}

/// Per-channel mean and standard deviation of an image dataset.
pub fn channel_stats(ds: &Dataset) -> Vec<(f64, f64)> {
    let shape = ds.sample_shape();
    let c = shape[0];
    let plane: usize = shape[1..].iter().product();
    (0..c)
        .map(|ch| {
            let values = || {
                (0..ds.len())
                    .flat_map(move |i| ds.images.row(i)[ch * plane..(ch + 1) * plane].iter())
            };
            let n = (ds.len() * plane) as f64;
            let mean = values().sum::<f64>() / n;
            let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Normalises `ds`. `reference` supplies the statistics for standardisation
/// (normally the training split); it defaults to `ds` itself.
pub fn normalize(ds: &Dataset, mode: Normalization, reference: Option<&Dataset>) -> Dataset {
    let mut out = ds.clone();
    match mode {
        Normalization::UnitInterval => {
            for v in out.images.data_mut() {
                *v = (*v / 127.5 - 1.0).clamp(-1.0, 1.0);
            }
        }
        Normalization::PerChannelStandardize => {
            let stats = channel_stats(reference.unwrap_or(ds));
            let plane: usize = ds.sample_shape()[1..].iter().product();
            let c = stats.len();
            for row in out.images.data_mut().chunks_mut(c * plane) {
                for (ch, &(mean, std)) in stats.iter().enumerate() {
                    let std = if std > 0.0 { std } else { 1.0 };
                    for v in &mut row[ch * plane..(ch + 1) * plane] {
                        *v = (*v - mean) / std;
                    }
                }
            }
        }
    }
    out
}

/// Class-balanced subsample with `n_per_class` samples of every class, chosen by
/// a seeded shuffle of each class's indices. Output order is by class, then by
/// original index.
pub fn subset(ds: &Dataset, n_per_class: usize, seed: u64) -> Result<Dataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n_per_class * ds.num_classes);
    for class in 0..ds.num_classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if idx.len() < n_per_class {
            return Err(DataError::InsufficientSamples {
                class,
                have: idx.len(),
                need: n_per_class,
            });
        }
        idx.shuffle(&mut rng);
        let mut chosen = idx[..n_per_class].to_vec();
        chosen.sort_unstable();
        picked.extend(chosen);
    }
    Ok(ds.select(&picked))
}

/// Deterministic mini-batches; the last partial batch is kept.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let item = gather(self.ds, &self.order[self.pos..end]);
        self.pos = end;
        Some(item)
    }
}

pub fn batches(ds: &Dataset, batch_size: usize, seed: u64, shuffle: bool) -> Batches<'_> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Batches {
        ds,
        order,
        batch_size,
        pos: 0,
    }
}

/// Gaussian blobs around fixed well-separated centres, clipped to `[-1, 1]`.
///
/// Centres sit at `±0.7` on the corners of the cube, one per class (class `k`
/// uses the sign pattern of `k`'s binary digits, cycling through dimensions).
/// With two classes in two dimensions they are `(-0.7, -0.7)` and `(0.7, 0.7)`.
pub fn synth_blobs(classes: usize, dims: usize, n: usize, seed: u64) -> Result<Dataset, DataError> {
    if classes < 2 || dims == 0 || n == 0 {
        return Err(DataError::Invalid(format!(
            "blobs need classes >= 2, dims > 0, n > 0 (got {classes}, {dims}, {n})"
        )));
    }
    if classes > 1 << dims.min(20) {
        return Err(DataError::Invalid(format!(
            "{classes} classes need more than {dims} dimensions"
        )));
    }
    let centres = blob_centres(classes, dims);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        for &c in &centres[class] {
            data.push((c + noise.sample(&mut rng)).clamp(-1.0, 1.0));
        }
        labels.push(class);
    }
    Dataset::new(Tensor::new(vec![n, dims], data), labels, classes, "blobs")
}

pub fn blob_centres(classes: usize, dims: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            // class 1 in 2D maps to the all-positive corner
            let code = if classes == 2 && k == 1 {
                (1usize << dims) - 1
            } else {
                k
            };
            (0..dims)
                .map(|d| {
                    if (code >> (d % usize::BITS as usize)) & 1 == 1 {
                        0.7
                    } else {
                        -0.7
                    }
                })
                .collect()
        })
        .collect()
}

/// Two interleaved spirals (classes 0 and 1) with `turns` revolutions,
/// Gaussian noise of standard deviation `noise`, scaled into `[-1, 1]^2`.
pub fn synth_spirals(n: usize, turns: f64, noise: f64, seed: u64) -> Result<Dataset, DataError> {
    if n == 0 || !(turns > 0.0) || noise < 0.0 {
        return Err(DataError::Invalid(format!(
            "spirals need n > 0, turns > 0, noise >= 0 (got {n}, {turns}, {noise})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t: f64 = rng.random_range(0.05..1.0);
        let angle = t * turns * std::f64::consts::TAU + class as f64 * std::f64::consts::PI;
        let r = 0.95 * t;
        for v in [r * angle.cos(), r * angle.sin()] {
            data.push((v + noise * normal.sample(&mut rng)).clamp(-1.0, 1.0));
        }
        labels.push(class);
    }
    Dataset::new(Tensor::new(vec![n, 2], data), labels, 2, "spirals")
}
