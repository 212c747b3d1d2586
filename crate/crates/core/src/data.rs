//! Dataset ingestion, seeded minibatching and the persistent input mask.
//!
//! Two on-disk formats are understood:
//!
//! * IDX (MNIST): big-endian `u32` magic (`0x00000803` images, `0x00000801`
//!   labels), big-endian `u32` extents, then raw unsigned bytes.
//! * CIFAR-10 binary: fixed 3073-byte records, one label byte followed by
//!   1024 red, 1024 green and 1024 blue bytes. SVHN converted to this
//!   layout loads the same way.
//!
//! Pixels are scaled by 1/255 and nothing else.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Float, Matrix, Tensor};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `N×C×U×V`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::dim(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::dim(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, U, V]` of one sample.
    pub fn sample_dims(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_dims().iter().product()
    }

    pub fn sample(&self, i: usize) -> &[Float] {
        let n = self.sample_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// The first `n` samples (or all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.gather(&(0..n).collect::<Vec<_>>())
    }

    pub fn gather(&self, indices: &[usize]) -> Dataset {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let [c, u, v] = self.sample_dims();
        Dataset {
            images: Tensor::new(vec![indices.len(), c, u, v], data)
                .expect("gathered extents are consistent"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

struct ByteCursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::format(self.path, self.pos as u64, format!("truncated while reading {what}"))
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image file and its label file.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let bytes = read_file(images_path)?;
    let mut cur = ByteCursor {
        path: images_path,
        bytes: &bytes,
        pos: 0,
    };
    let magic = cur.u32_be("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            images_path,
            0,
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = cur.u32_be("image count")? as usize;
    let rows = cur.u32_be("row count")? as usize;
    let cols = cur.u32_be("column count")? as usize;
    let body = n * rows * cols;
    if bytes.len() != cur.pos + body {
        return Err(Error::format(
            images_path,
            bytes.len().min(cur.pos + body) as u64,
            format!(
                "header declares {n}x{rows}x{cols} pixels ({body} bytes) but {} follow",
                bytes.len() - cur.pos
            ),
        ));
    }
    if rows == 0 || cols == 0 || n == 0 {
        return Err(Error::format(images_path, 4, "zero image extent"));
    }
    let pixels: Vec<Float> = bytes[cur.pos..]
        .iter()
        .map(|&b| b as Float / 255.0)
        .collect();

    let lbytes = read_file(labels_path)?;
    let mut cur = ByteCursor {
        path: labels_path,
        bytes: &lbytes,
        pos: 0,
    };
    let magic = cur.u32_be("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path,
            0,
            format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let nl = cur.u32_be("label count")? as usize;
    if nl != n {
        return Err(Error::format(
            labels_path,
            4,
            format!("{nl} labels for {n} images"),
        ));
    }
    if lbytes.len() != cur.pos + nl {
        return Err(Error::format(
            labels_path,
            lbytes.len().min(cur.pos + nl) as u64,
            format!("expected {nl} label bytes, found {}", lbytes.len() - cur.pos),
        ));
    }
    let labels: Vec<usize> = lbytes[cur.pos..].iter().map(|&b| b as usize).collect();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::format(
            labels_path,
            (cur.pos + pos) as u64,
            format!("label {} is not a digit", labels[pos]),
        ));
    }
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], pixels)?, labels, 10)
}

/// Loads and concatenates CIFAR-10 style binary batch files.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Config("no CIFAR batch files given".into()));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(
                path,
                (bytes.len() - bytes.len() % CIFAR_RECORD) as u64,
                format!(
                    "file length {} is not a positive multiple of the {CIFAR_RECORD}-byte record",
                    bytes.len()
                ),
            ));
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let label = record[0] as usize;
            if label > 9 {
                return Err(Error::format(
                    path,
                    (r * CIFAR_RECORD) as u64,
                    format!("label {label} outside 0..10"),
                ));
            }
            labels.push(label);
            pixels.extend(record[1..].iter().map(|&b| b as Float / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, 3, CIFAR_SIDE, CIFAR_SIDE], pixels)?,
        labels,
        10,
    )
}

/// Dataset families accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    /// Any dataset converted to CIFAR-10 binary records (e.g. SVHN).
    Cifar10Format,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar10-format" => Ok(DatasetKind::Cifar10Format),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar10Format => "cifar10-format",
        }
    }
}

fn find_existing(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

fn sorted_bins(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|x| x == "bin")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(prefix))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Loads `(train, test)` from a data directory laid out the usual way:
///
/// * mnist: `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
///   `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte` (`.` or `-` before `idx` both accepted)
/// * cifar10: `data_batch_1.bin`..`data_batch_5.bin` and `test_batch.bin`,
///   directly in the directory or in `cifar-10-batches-bin/`
/// * cifar10-format: every `train*.bin` and `test*.bin`, in name order
pub fn load_dataset(kind: DatasetKind, dir: &Path) -> Result<(Dataset, Dataset)> {
    match kind {
        DatasetKind::Mnist => {
            let pick = |stem: &str, what: &str| -> Result<PathBuf> {
                find_existing(
                    dir,
                    &[
                        &format!("{stem}-{what}"),
                        &format!("{stem}.{what}"),
                    ],
                )
                .ok_or_else(|| Error::Config(format!("no {stem}-{what} in {}", dir.display())))
            };
            let train = load_mnist_idx(
                pick("train", "images-idx3-ubyte")?,
                pick("train", "labels-idx1-ubyte")?,
            )?;
            let test = load_mnist_idx(
                pick("t10k", "images-idx3-ubyte")?,
                pick("t10k", "labels-idx1-ubyte")?,
            )?;
            Ok((train, test))
        }
        DatasetKind::Cifar10 => {
            let nested = dir.join("cifar-10-batches-bin");
            let base = if nested.is_dir() { nested } else { dir.to_path_buf() };
            let train: Vec<PathBuf> = (1..=5)
                .map(|i| base.join(format!("data_batch_{i}.bin")))
                .collect();
            if let Some(missing) = train.iter().find(|p| !p.is_file()) {
                return Err(Error::Config(format!("missing {}", missing.display())));
            }
            let test = base.join("test_batch.bin");
            Ok((load_cifar_binary(&train)?, load_cifar_binary(&[test])?))
        }
        DatasetKind::Cifar10Format => {
            let train = sorted_bins(dir, "train")?;
            let test = sorted_bins(dir, "test")?;
            if train.is_empty() || test.is_empty() {
                return Err(Error::Config(format!(
                    "expected train*.bin and test*.bin in {}",
                    dir.display()
                )));
            }
            Ok((load_cifar_binary(&train)?, load_cifar_binary(&test)?))
        }
    }
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        m.set(i, l, 1.0);
    }
    m
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `M×C×U×V` in the dataset's original feature space.
    pub inputs: Tensor,
    /// One-hot targets, `M×num_classes`.
    pub targets: Matrix,
    pub labels: Vec<usize>,
}

/// One epoch of fixed-size minibatches in a seeded order. The trailing
/// partial batch is dropped.
pub struct Minibatches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Minibatches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len() / self.batch_size
    }
}

impl Iterator for Minibatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let start = self.next * self.batch_size;
        if start + self.batch_size > self.order.len() {
            return None;
        }
        self.next += 1;
        let idx = &self.order[start..start + self.batch_size];
        let sub = self.dataset.gather(idx);
        Some(Batch {
            targets: one_hot(&sub.labels, sub.num_classes),
            inputs: sub.images,
            labels: sub.labels,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.num_batches() - self.next;
        (left, Some(left))
    }
}

/// Sample order for `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 is used for weight initialisation
    rng.set_stream(epoch + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub fn minibatches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Minibatches<'_>> {
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(Error::Config(format!(
            "batch size {batch_size} must be in 1..={}",
            dataset.len()
        )));
    }
    Ok(Minibatches {
        dataset,
        order: epoch_permutation(dataset.len(), seed, epoch),
        batch_size,
        next: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Flattened per-sample features (fully-connected input layer).
    Features,
    /// Whole input channels (convolutional input layer).
    Channels,
}

/// Which original input features (or channels) survive input-layer pruning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputMask {
    kind: MaskKind,
    extent: usize,
    retained: Vec<usize>,
}

impl InputMask {
    pub fn full(kind: MaskKind, extent: usize) -> Self {
        InputMask {
            kind,
            extent,
            retained: (0..extent).collect(),
        }
    }

    pub fn new(kind: MaskKind, extent: usize, retained: Vec<usize>) -> Result<Self> {
        if retained.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::dim("mask indices must be strictly ascending"));
        }
        if retained.last().is_some_and(|&i| i >= extent) {
            return Err(Error::dim(format!(
                "mask index out of range 0..{extent}"
            )));
        }
        Ok(InputMask {
            kind,
            extent,
            retained,
        })
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    /// Size of the original feature (or channel) space.
    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.retained.len() == self.extent
    }

    /// Drops the entries at `positions` (indices into the currently retained list).
    pub fn remove_positions(&mut self, positions: &[usize]) -> Result<()> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.retained.len()) {
            return Err(Error::dim(format!(
                "mask position {bad} out of range 0..{}",
                self.retained.len()
            )));
        }
        let keep = crate::tensor::complement(self.retained.len(), positions);
        self.retained = keep.iter().map(|&p| self.retained[p]).collect();
        Ok(())
    }

    /// The mask equivalent to applying `self` and then `inner`, where `inner`
    /// indexes the output of `self`.
    pub fn compose(&self, inner: &InputMask) -> Result<InputMask> {
        if inner.extent != self.retained.len() || inner.kind != self.kind {
            return Err(Error::dim(format!(
                "inner mask over {} entries cannot follow a mask retaining {}",
                inner.extent,
                self.retained.len()
            )));
        }
        Ok(InputMask {
            kind: self.kind,
            extent: self.extent,
            retained: inner.retained.iter().map(|&p| self.retained[p]).collect(),
        })
    }

    /// Features kept by both masks (same original space).
    pub fn intersect(&self, other: &InputMask) -> Result<InputMask> {
        if other.extent != self.extent || other.kind != self.kind {
            return Err(Error::dim("masks over different feature spaces"));
        }
        let retained = self
            .retained
            .iter()
            .copied()
            .filter(|i| other.retained.binary_search(i).is_ok())
            .collect();
        Ok(InputMask {
            kind: self.kind,
            extent: self.extent,
            retained,
        })
    }
}

/// Keeps only the masked features (`M×k` result) or channels (`M×k×U×V`),
/// preserving order.
pub fn apply_input_mask(batch: &Tensor, mask: &InputMask) -> Result<Tensor> {
    let m = batch.shape()[0];
    let data = batch.data();
    match mask.kind {
        MaskKind::Features => {
            let per = batch.len() / m;
            if per != mask.extent {
                return Err(Error::dim(format!(
                    "feature mask over {} entries applied to samples of {per}",
                    mask.extent
                )));
            }
            let k = mask.retained.len();
            let mut out = Vec::with_capacity(m * k);
            for s in data.chunks_exact(per) {
                out.extend(mask.retained.iter().map(|&i| s[i]));
            }
            Tensor::new(vec![m, k], out)
        }
        MaskKind::Channels => {
            let [c, u, v] = match *batch.shape() {
                [_, c, u, v] => [c, u, v],
                _ => return Err(Error::dim("channel mask needs an M×C×U×V batch")),
            };
            if c != mask.extent {
                return Err(Error::dim(format!(
                    "channel mask over {} channels applied to {c}",
                    mask.extent
                )));
            }
            let plane = u * v;
            let k = mask.retained.len();
            let mut out = Vec::with_capacity(m * k * plane);
            for s in data.chunks_exact(c * plane) {
                for &ch in &mask.retained {
                    out.extend_from_slice(&s[ch * plane..(ch + 1) * plane]);
                }
            }
            Tensor::new(vec![m, k, u, v], out)
        }
    }
}
