//! Dataset sources and batching: synthetic Gaussian blobs, IDX-format image
//! files (the big-endian format Fashion-MNIST ships in), z-score
//! normalization, and seeded epoch permutations.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Labeled classification dataset. Features are [n x d]; labels are class
/// indices in [0, class_count).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

/// Per-feature statistics from a z-score fit, reusable on a held-out split.
#[derive(Clone, Debug)]
pub struct ZscoreStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if !features.is_matrix() {
            return Err(Error::contract(format!(
                "features must be [n x d], got shape {:?}",
                features.shape()
            )));
        }
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Consistency(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if class_count == 0 || n < class_count {
            return Err(Error::contract(format!(
                "need at least one sample per class: n={n}, classes={class_count}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if !features.all_finite() {
            return Err(Error::numeric("non-finite feature values".into()));
        }
        Ok(Dataset { features, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Fit per-feature mean/std on this dataset and return the normalized
    /// copy together with the statistics. Constant features get std 1 so the
    /// transform stays finite.
    pub fn zscore(&self) -> Result<(Dataset, ZscoreStats)> {
        let (n, d) = (self.len(), self.dim());
        let data = self.features.data();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &x) in mean.iter_mut().zip(&data[i * d..(i + 1) * d]) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                let c = data[i * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|&v| {
                let s = (v / n as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let stats = ZscoreStats { mean, std };
        Ok((self.zscore_with(&stats)?, stats))
    }

    /// Apply existing z-score statistics (fit on the training split) to this
    /// dataset.
    pub fn zscore_with(&self, stats: &ZscoreStats) -> Result<Dataset> {
        let d = self.dim();
        if stats.mean.len() != d || stats.std.len() != d {
            return Err(Error::contract(format!(
                "z-score stats have {} features, dataset has {d}",
                stats.mean.len()
            )));
        }
        let n = self.len();
        let mut out = self.features.data().to_vec();
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = (out[i * d + j] - stats.mean[j]) / stats.std[j];
            }
        }
        Dataset::new(
            Tensor::new(&[n, d], out)?,
            self.labels.clone(),
            self.class_count,
        )
    }

    /// Copy the rows at `idx` into a fresh `[len(idx) x d]` batch.
    pub fn select(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::contract(format!(
                    "batch index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.features.data()[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(&[idx.len(), d], data)?, labels))
    }

    /// First `n` samples (or the whole dataset when n >= len). Used by the
    /// desk-scale subset knob.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let idx: Vec<usize> = (0..n).collect();
        let (features, labels) = self.select(&idx)?;
        Dataset::new(features, labels, self.class_count)
    }
}

/// Synthetic Gaussian blobs: `classes` centers on a scaled coordinate simplex
/// (axis c holds center `BLOB_CENTER_SCALE * e_c`), each point = its class
/// center + `spread` * standard normal noise. Labels cycle round-robin so
/// every class is populated whenever n >= classes. Deterministic per seed.
pub fn gen_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    const BLOB_CENTER_SCALE: f64 = 2.0;
    if classes == 0 || n < classes {
        return Err(Error::contract(format!(
            "need n >= classes >= 1, got n={n}, classes={classes}"
        )));
    }
    if dim < classes {
        return Err(Error::contract(format!(
            "blob centers sit one per axis, so dim ({dim}) must be >= classes ({classes})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::contract(format!("spread must be finite and >= 0, got {spread}")));
    }
    let mut rng = Rng::new(seed);
    let mut data = vec![0.0; n * dim];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class);
        let row = &mut data[i * dim..(i + 1) * dim];
        row[class] = BLOB_CENTER_SCALE;
        if spread > 0.0 {
            for x in row.iter_mut() {
                *x += spread * rng.normal();
            }
        }
    }
    Dataset::new(Tensor::new(&[n, dim], data)?, labels, classes)
}

// --- IDX format --------------------------------------------------------
//
// Big-endian container: u32 magic (0x0000_08NN: dtype u8, NN = rank),
// then one u32 extent per dimension, then the raw payload.
// Images use magic 2051 (rank 3: count, rows, cols); labels use 2049 (rank 1).

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

fn read_u32_be(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let Some(chunk) = bytes.get(at..at + 4) else {
        return Err(Error::Format(format!("{what}: file truncated at byte {at}")));
    };
    Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
}

/// Load an IDX image/label file pair into a Dataset with pixels scaled to
/// [0, 1] and class_count = max label + 1.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img_bytes = Vec::new();
    std::fs::File::open(images_path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", images_path.display())))?
        .read_to_end(&mut img_bytes)?;
    let mut lbl_bytes = Vec::new();
    std::fs::File::open(labels_path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", labels_path.display())))?
        .read_to_end(&mut lbl_bytes)?;

    let magic = read_u32_be(&img_bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: bad magic {magic:#010x}, expected 2051 (0x00000803)"
        )));
    }
    let count = read_u32_be(&img_bytes, 4, "images")? as usize;
    let rows = read_u32_be(&img_bytes, 8, "images")? as usize;
    let cols = read_u32_be(&img_bytes, 12, "images")? as usize;
    let payload = &img_bytes[16..];
    let want = count
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or_else(|| Error::Format("images: extent overflow".into()))?;
    if payload.len() != want {
        return Err(Error::Format(format!(
            "images: payload has {} bytes, header implies {want}",
            payload.len()
        )));
    }

    let lmagic = read_u32_be(&lbl_bytes, 0, "labels")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: bad magic {lmagic:#010x}, expected 2049 (0x00000801)"
        )));
    }
    let lcount = read_u32_be(&lbl_bytes, 4, "labels")? as usize;
    let lpayload = &lbl_bytes[8..];
    if lpayload.len() != lcount {
        return Err(Error::Format(format!(
            "labels: payload has {} bytes, header implies {lcount}",
            lpayload.len()
        )));
    }
    if lcount != count {
        return Err(Error::Consistency(format!(
            "{count} images but {lcount} labels"
        )));
    }

    let features: Vec<f64> = payload.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lpayload.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    Dataset::new(
        Tensor::new(&[count, rows * cols], features)?,
        labels,
        class_count,
    )
}

/// Write images (count x rows x cols, u8 pixels, row-major) as an IDX file.
pub fn write_idx_images(
    path: &Path,
    count: usize,
    rows: usize,
    cols: usize,
    pixels: &[u8],
) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(Error::contract(format!(
            "pixel buffer has {} bytes, extents imply {}",
            pixels.len(),
            count * rows * cols
        )));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    f.write_all(&(count as u32).to_be_bytes())?;
    f.write_all(&(rows as u32).to_be_bytes())?;
    f.write_all(&(cols as u32).to_be_bytes())?;
    f.write_all(pixels)?;
    Ok(())
}

/// Write class labels (one u8 each) as an IDX file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}

/// How one epoch is cut into mini-batches: size, permutation seed, and
/// whether a short final batch is kept (drop_last=false) or dropped.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub drop_last: bool,
}

impl BatchPlan {
    /// T, the number of optimizer iterations in one epoch:
    /// ceil(n/|B|) when keeping the short tail, floor(n/|B|) when dropping it.
    pub fn batches_per_epoch(&self, n: usize) -> Result<usize> {
        self.validate(n)?;
        Ok(if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        })
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1".into()));
        }
        if self.batch_size > n {
            return Err(Error::contract(format!(
                "batch_size {} exceeds dataset size {n}",
                self.batch_size
            )));
        }
        Ok(())
    }

    /// The ordered index batches for one epoch: a seeded permutation of 0..n
    /// cut into consecutive slices. Each (seed, epoch) pair has its own
    /// permutation; each index appears exactly once per epoch.
    pub fn batches(&self, n: usize, epoch: u64) -> Result<Vec<Vec<usize>>> {
        self.validate(n)?;
        let mut perm: Vec<usize> = (0..n).collect();
        Rng::with_stream(self.seed, epoch.wrapping_add(1)).shuffle(&mut perm);
        let t = self.batches_per_epoch(n)?;
        let mut out = Vec::with_capacity(t);
        for b in 0..t {
            let lo = b * self.batch_size;
            let hi = ((b + 1) * self.batch_size).min(n);
            out.push(perm[lo..hi].to_vec());
        }
        Ok(out)
    }
}
