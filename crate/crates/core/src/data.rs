//! Datasets: IDX (MNIST container) files and synthetic Gaussian blobs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the default MNIST directory.
pub const DATA_DIR_ENV: &str = "HASHEDNETS_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One example per row, features in `[0, 1]`.
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Optional per-example target distributions (dark knowledge).
    pub soft_targets: Option<Matrix>,
    /// `(rows, cols)` of the source images, when loaded from IDX.
    pub image_dims: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: samples.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if samples.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("dataset contains non-finite features".into()));
        }
        Ok(Self {
            samples,
            labels,
            n_classes,
            soft_targets: None,
            image_dims: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn with_soft_targets(mut self, soft: Matrix) -> Result<Self> {
        if soft.rows() != self.len() || soft.cols() != self.n_classes {
            return Err(Error::DimensionMismatch {
                context: "soft targets: rows x classes",
                expected: self.len() * self.n_classes,
                actual: soft.rows() * soft.cols(),
            });
        }
        self.soft_targets = Some(soft);
        Ok(self)
    }

    /// The first `n` examples (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            soft_targets: self.soft_targets.as_ref().map(|s| s.select_rows(indices)),
            image_dims: self.image_dims,
        }
    }

    /// Min-max rescaling of all features into `[0, 1]`. Idempotent: a
    /// second application leaves every value unchanged.
    pub fn rescale_unit(&mut self) {
        let data = self.samples.as_slice();
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return;
        }
        let span = hi - lo;
        for r in 0..self.samples.rows() {
            for v in self.samples.row_mut(r) {
                *v = (*v - lo) / span;
            }
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            offset,
            needed: 4,
            len: bytes.len(),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, needed: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(offset..offset + needed).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        offset: bytes.len(),
        needed: offset + needed,
        len: bytes.len(),
    })
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let pixels = payload(bytes, 16, count * rows * cols, path)?;
    Ok((count, rows, cols, pixels.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    Ok(payload(bytes, 8, count, path)?.to_vec())
}

/// Loads an IDX image/label pair, scaling pixels by `1/255` and
/// flattening each image row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (count, rows, cols, pixels) = parse_idx_images(&read_file(ip)?, ip)?;
    let labels = parse_idx_labels(&read_file(lp)?, lp)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let samples = Matrix::from_vec(count, rows * cols, pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(1);
    let mut ds = Dataset::new(samples, labels, n_classes)?;
    ds.image_dims = Some((rows, cols));
    Ok(ds)
}

/// Writes `dataset` as an IDX pair. Features are mapped back to bytes with
/// `round(255 x)`, so a loaded file is reproduced byte for byte.
pub fn write_idx(dataset: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (rows, cols) = dataset.image_dims.unwrap_or((1, dataset.dim()));
    if rows * cols != dataset.dim() {
        return Err(Error::DimensionMismatch {
            context: "write_idx: image dims",
            expected: dataset.dim(),
            actual: rows * cols,
        });
    }
    let mut img = Vec::with_capacity(16 + dataset.samples.as_slice().len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [dataset.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend(
        dataset
            .samples
            .as_slice()
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for &l in &dataset.labels {
        lab.push(u8::try_from(l).map_err(|_| Error::Config(format!("label {l} does not fit a byte")))?);
    }
    let ip = images_path.as_ref();
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    let lp = labels_path.as_ref();
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))?;
    Ok(())
}

/// `$HASHEDNETS_DATA_DIR`, falling back to `data/mnist`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Standard MNIST train/test split from `dir`, truncated to the first
/// `train_limit` / `test_limit` examples.
pub fn load_mnist(dir: &Path, train_limit: Option<usize>, test_limit: Option<usize>) -> Result<(Dataset, Dataset)> {
    let train = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    let mut train = train.take(train_limit.unwrap_or(usize::MAX));
    let mut test = test.take(test_limit.unwrap_or(usize::MAX));
    train.n_classes = 10;
    test.n_classes = 10;
    Ok((train, test))
}

/// Gaussian blobs around seeded uniform centers in `[0, 1]^dim`, clipped
/// to `[0, 1]`. Examples cycle through the classes (example `t` has label
/// `t mod classes`), so every prefix is class-balanced.
pub fn synth_blobs(n_per_class: usize, classes: usize, dim: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if n_per_class == 0 || classes == 0 || dim == 0 {
        return Err(Error::Config("synth_blobs needs positive sizes".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and non-negative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let n = n_per_class * classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for t in 0..n {
        let c = t % classes;
        for &mu in &centers[c] {
            let eps: f64 = StandardNormal.sample(&mut rng);
            data.push((mu + noise * eps).clamp(0.0, 1.0));
        }
        labels.push(c);
    }
    Dataset::new(Matrix::from_vec(n, dim, data)?, labels, classes)
}

/// Train/test blobs sharing the same centers.
pub fn synth_blobs_split(
    n_train_per_class: usize,
    n_test_per_class: usize,
    classes: usize,
    dim: usize,
    seed: u64,
    noise: f64,
) -> Result<(Dataset, Dataset)> {
    let all = synth_blobs(n_train_per_class + n_test_per_class, classes, dim, seed, noise)?;
    let cut = n_train_per_class * classes;
    let train: Vec<usize> = (0..cut).collect();
    let test: Vec<usize> = (cut..all.len()).collect();
    Ok((all.subset(&train), all.subset(&test)))
}
