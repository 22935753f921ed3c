//! Dataset ingestion and preparation: IDX parsing, class filtering, the
//! scale/shift/resize/normalize pipeline, cycle-m non-IID sharding, and
//! deterministic batch shuffling.

use rand::seq::SliceRandom;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::vqc::argmax;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw byte images with integer labels, as parsed from IDX files.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Pixel shift applied after \[0,1\] scaling and before resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingMode {
    /// No shift beyond \[0,1\] scaling.
    Vanilla,
    /// Subtract the mean training image.
    Mean,
    /// Shift all pixels by -0.5.
    Half,
}

impl std::fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncodingMode::Vanilla => "vanilla",
            EncodingMode::Mean => "mean",
            EncodingMode::Half => "half",
        })
    }
}

impl std::str::FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(EncodingMode::Vanilla),
            "mean" => Ok(EncodingMode::Mean),
            "half" => Ok(EncodingMode::Half),
            other => Err(Error::config(format!("unknown encoding mode `{other}`"))),
        }
    }
}

/// Cycle-m shard assignment: worker `w` sees the m classes
/// `kept_classes[(w*m + j) mod C]` for `j = 0..m`.
#[derive(Debug, Clone)]
pub struct ShardSpec {
    pub m_classes: usize,
    pub n_workers: usize,
    pub kept_classes: Vec<u8>,
}

impl ShardSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kept_classes.is_empty() {
            return Err(Error::config("shard spec has no kept classes".to_string()));
        }
        if self.m_classes == 0 || self.m_classes > self.kept_classes.len() {
            return Err(Error::config(format!(
                "m_classes must be in 1..={}, got {}",
                self.kept_classes.len(),
                self.m_classes
            )));
        }
        if self.n_workers == 0 {
            return Err(Error::config(
                "shard spec needs at least one worker".to_string(),
            ));
        }
        Ok(())
    }

    /// The class set worker `w` is allowed to see.
    pub fn classes_for(&self, worker: usize) -> Result<Vec<u8>> {
        self.validate()?;
        if worker >= self.n_workers {
            return Err(Error::config(format!(
                "worker index {worker} out of range for {} workers",
                self.n_workers
            )));
        }
        let c = self.kept_classes.len();
        Ok((0..self.m_classes)
            .map(|j| self.kept_classes[(worker * self.m_classes + j) % c])
            .collect())
    }
}

/// One preprocessed sample, ready for either model path.
///
/// `x` is the unit-norm amplitude vector; `x_norm` is the L2 norm of the
/// pre-normalization pixel vector, so the classical path can recover it as
/// `x * x_norm`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub x: Vec<f64>,
    pub x_norm: f64,
    pub y: Vec<f64>,
    pub source_label: u8,
}

impl PreparedSample {
    pub fn class_index(&self) -> usize {
        argmax(&self.y)
    }

    /// The pre-normalization pixel vector used by the classical baseline.
    pub fn classical_input(&self) -> Vec<f64> {
        self.x.iter().map(|v| v * self.x_norm).collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader {
            bytes,
            offset: 0,
            what,
        }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.offset + len > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.offset,
                what: format!("{} truncated (needed {len} more bytes)", self.what),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse paired IDX image/label byte streams.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<RawDataset> {
    let mut img = Reader::new(image_bytes, "image file");
    let magic = img.read_u32()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            what: format!("image file magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        });
    }
    let count = img.read_u32()? as usize;
    let rows = img.read_u32()? as usize;
    let cols = img.read_u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Parse {
            offset: 8,
            what: format!("image dimensions {rows}x{cols} invalid"),
        });
    }
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        images.push(img.take(rows * cols)?.to_vec());
    }

    let mut lbl = Reader::new(label_bytes, "label file");
    let magic = lbl.read_u32()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            what: format!("label file magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        });
    }
    let label_count = lbl.read_u32()? as usize;
    if label_count != count {
        return Err(Error::Parse {
            offset: 4,
            what: format!("{count} images but {label_count} labels"),
        });
    }
    let labels = lbl.take(count)?.to_vec();
    if let Some(bad) = labels.iter().position(|l| *l > 9) {
        return Err(Error::Parse {
            offset: 8 + bad,
            what: format!("label {} out of range 0..=9", labels[bad]),
        });
    }
    Ok(RawDataset {
        images,
        labels,
        rows,
        cols,
    })
}

/// Read and parse IDX image/label files from disk.
pub fn load_idx_files(image_path: &Path, label_path: &Path) -> Result<RawDataset> {
    let images = std::fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let labels = std::fs::read(label_path).map_err(|e| Error::io(label_path, e))?;
    parse_idx(&images, &labels)
}

/// Drop every sample whose label is in `remove`, preserving order.
pub fn class_filter(ds: &RawDataset, remove: &[u8]) -> RawDataset {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (img, lbl) in ds.images.iter().zip(&ds.labels) {
        if !remove.contains(lbl) {
            images.push(img.clone());
            labels.push(*lbl);
        }
    }
    RawDataset {
        images,
        labels,
        rows: ds.rows,
        cols: ds.cols,
    }
}

/// Mean image of a dataset on the \[0,1\] pixel scale; input for `Mean`
/// encoding.
pub fn mean_image(ds: &RawDataset) -> Vec<f64> {
    let mut mean = vec![0.0; ds.rows * ds.cols];
    if ds.is_empty() {
        return mean;
    }
    for img in &ds.images {
        for (m, p) in mean.iter_mut().zip(img) {
            *m += *p as f64 / 255.0;
        }
    }
    let scale = 1.0 / ds.len() as f64;
    for m in &mut mean {
        *m *= scale;
    }
    mean
}

/// Bilinear resize without corner alignment: output pixel centers sample the
/// source at `(i + 0.5) * scale - 0.5`, clamped at the borders.
fn resize_bilinear(
    src: &[f64],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(dst_h * dst_w);
    let sy = src_h as f64 / dst_h as f64;
    let sx = src_w as f64 / dst_w as f64;
    for r in 0..dst_h {
        let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (src_h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let wy = fy - y0 as f64;
        for c in 0..dst_w {
            let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (src_w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * src_w + x0] * (1.0 - wx) + src[y0 * src_w + x1] * wx;
            let bottom = src[y1 * src_w + x0] * (1.0 - wx) + src[y1 * src_w + x1] * wx;
            out.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    out
}

/// L2-normalize in place, returning the original norm. An all-zero vector
/// becomes the basis-0 unit vector with norm reported as 0.
fn l2_normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
        return 0.0;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    norm
}

/// Run the full preparation pipeline: scale to \[0,1\], shift per `mode`,
/// resize to a `2^(n/2)` square, flatten, unit-normalize, one-hot encode.
pub fn preprocess(
    ds: &RawDataset,
    mode: EncodingMode,
    n_qubits: usize,
    kept_classes: &[u8],
    train_mean: Option<&[f64]>,
) -> Result<Vec<PreparedSample>> {
    if n_qubits % 2 != 0 {
        return Err(Error::config(format!(
            "image encoding needs an even qubit count, got {n_qubits}"
        )));
    }
    let side = 1usize << (n_qubits / 2);
    let mean = match (mode, train_mean) {
        (EncodingMode::Mean, None) => {
            return Err(Error::config(
                "mean encoding requires a training mean image".to_string(),
            ))
        }
        (EncodingMode::Mean, Some(m)) => {
            if m.len() != ds.rows * ds.cols {
                return Err(Error::dimension(format!(
                    "training mean has {} pixels, images have {}",
                    m.len(),
                    ds.rows * ds.cols
                )));
            }
            Some(m)
        }
        _ => None,
    };

    let n_classes = kept_classes.len();
    let mut out = Vec::with_capacity(ds.len());
    for (img, label) in ds.images.iter().zip(&ds.labels) {
        let class_index = kept_classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::argument(format!("label {label} not among the kept classes")))?;

        let mut pixels: Vec<f64> = img.iter().map(|p| *p as f64 / 255.0).collect();
        match mode {
            EncodingMode::Vanilla => {}
            EncodingMode::Mean => {
                for (p, m) in pixels.iter_mut().zip(mean.unwrap()) {
                    *p -= m;
                }
            }
            EncodingMode::Half => {
                for p in &mut pixels {
                    *p -= 0.5;
                }
            }
        }
        let mut x = resize_bilinear(&pixels, ds.rows, ds.cols, side, side);
        let x_norm = l2_normalize(&mut x);

        let mut y = vec![0.0; n_classes];
        y[class_index] = 1.0;
        out.push(PreparedSample {
            x,
            x_norm,
            y,
            source_label: *label,
        });
    }
    Ok(out)
}

/// The subset of `samples` that cycle-m sharding assigns to `worker`,
/// order preserved.
pub fn cycle_m_shard(
    samples: &[PreparedSample],
    spec: &ShardSpec,
    worker: usize,
) -> Result<Vec<PreparedSample>> {
    let classes = spec.classes_for(worker)?;
    Ok(samples
        .iter()
        .filter(|s| classes.contains(&s.source_label))
        .cloned()
        .collect())
}

/// Deterministic shuffled batch index lists for one epoch, keyed by
/// `(seed, worker, epoch)`. The final partial batch is included.
pub fn batches(
    n_samples: usize,
    batch_size: usize,
    seed: u64,
    worker: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1".to_string()));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut rng = substream(seed, "batches", &[worker, epoch]);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
