//! Shared test fixtures: a deterministic synthetic digit dataset written in
//! real IDX format, so tests exercise the exact parse/filter/preprocess/shard
//! pipeline without shipping the full handwritten-digit corpus.
//!
//! Each class is a Gaussian blob at a class-specific grid position with
//! jittered center, varying intensity, and background noise. Classes stay
//! visually distinct after heavy downscaling but are not trivially separable
//! for an untrained model.

use rand::Rng;
use std::path::{Path, PathBuf};

use bqfl_core::rng::substream;

pub const IMG_SIDE: usize = 28;

#[derive(Debug, Clone, Copy)]
pub struct BlobStyle {
    /// Blob width of class 0; widths grow linearly with the class index so
    /// classes also differ in total ink, the way real digits do.
    pub sigma_base: f64,
    pub sigma_step: f64,
    /// Peak brightness of class 0 and its per-class increment.
    pub intensity_base: f64,
    pub intensity_step: f64,
    pub noise: f64,
    pub jitter: f64,
}

impl Default for BlobStyle {
    fn default() -> Self {
        BlobStyle {
            sigma_base: 1.8,
            sigma_step: 0.35,
            intensity_base: 0.85,
            intensity_step: 0.0,
            noise: 0.12,
            jitter: 3.0,
        }
    }
}

pub struct SyntheticPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

fn render_sample(class: u8, style: &BlobStyle, rng: &mut impl Rng) -> Vec<u8> {
    // Class c occupies a grid cell of a 7x7-pixel lattice, so after a 4x4
    // downscale each class concentrates on its own cell. Odd classes swap
    // rows so contiguous class ranges (cycle-m shards) span both grid rows
    // and all columns instead of factorizing along one image axis.
    let cell = if class < 8 && class % 2 == 1 {
        (class + 4) % 8
    } else {
        class
    };
    let cy = 7.0 * (cell / 4) as f64 + 3.5 + rng.gen_range(-style.jitter..style.jitter);
    let cx = 7.0 * (cell % 4) as f64 + 3.5 + rng.gen_range(-style.jitter..style.jitter);
    let intensity =
        style.intensity_base + style.intensity_step * class as f64 + rng.gen_range(-0.03..0.03);
    let sigma = style.sigma_base + style.sigma_step * class as f64;

    let mut img = Vec::with_capacity(IMG_SIDE * IMG_SIDE);
    for y in 0..IMG_SIDE {
        for x in 0..IMG_SIDE {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let blob = intensity * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            let noise = rng.gen_range(0.0..style.noise);
            img.push(((blob + noise).min(1.0) * 255.0) as u8);
        }
    }
    img
}

fn write_idx_pair(
    dir: &Path,
    name: &str,
    count: usize,
    style: &BlobStyle,
    stream_tag: u64,
) -> (PathBuf, PathBuf) {
    let mut rng = substream(977, "synthetic-digits", &[stream_tag]);
    let mut images = Vec::with_capacity(16 + count * IMG_SIDE * IMG_SIDE);
    images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    images.extend_from_slice(&(count as u32).to_be_bytes());
    images.extend_from_slice(&(IMG_SIDE as u32).to_be_bytes());
    images.extend_from_slice(&(IMG_SIDE as u32).to_be_bytes());

    let mut labels = Vec::with_capacity(8 + count);
    labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    labels.extend_from_slice(&(count as u32).to_be_bytes());

    for i in 0..count {
        let class = (i % 10) as u8;
        images.extend_from_slice(&render_sample(class, style, &mut rng));
        labels.push(class);
    }

    let img_path = dir.join(format!("{name}-images.idx"));
    let lbl_path = dir.join(format!("{name}-labels.idx"));
    std::fs::write(&img_path, images).expect("write idx images");
    std::fs::write(&lbl_path, labels).expect("write idx labels");
    (img_path, lbl_path)
}

/// Write a train/test pair of IDX files into `dir` with custom blob style.
pub fn write_synthetic_dataset_styled(
    dir: &Path,
    train_n: usize,
    test_n: usize,
    style: &BlobStyle,
) -> SyntheticPaths {
    let (train_images, train_labels) = write_idx_pair(dir, "train", train_n, style, 0);
    let (test_images, test_labels) = write_idx_pair(dir, "test", test_n, style, 1);
    SyntheticPaths {
        train_images,
        train_labels,
        test_images,
        test_labels,
    }
}

/// Write a train/test pair of IDX files into `dir`.
pub fn write_synthetic_dataset(dir: &Path, train_n: usize, test_n: usize) -> SyntheticPaths {
    write_synthetic_dataset_styled(dir, train_n, test_n, &BlobStyle::default())
}

/// The desk-scale base config: 9 devices (7 workers, 2 miners), 4 qubits,
/// cycle-4 shards, 200 samples per worker, batch 128, lr 0.01, 5 local
/// epochs, 3 rounds.
pub fn desk_config_text(paths: &SyntheticPaths, out_dir: &Path) -> String {
    format!(
        "mode = bqfl-avg\n\
         n_qubits = 4\n\
         k_layers = 2\n\
         n_workers = 7\n\
         n_miners = 2\n\
         m_classes = 4\n\
         removed_classes = 8,9\n\
         encoding = vanilla\n\
         readout = sample\n\
         epochs = 5\n\
         batch_size = 128\n\
         learning_rate = 0.01\n\
         rounds = 3\n\
         seed = 1\n\
         samples_per_worker = 200\n\
         train_images = {}\n\
         train_labels = {}\n\
         test_images = {}\n\
         test_labels = {}\n\
         out_dir = {}\n",
        paths.train_images.display(),
        paths.train_labels.display(),
        paths.test_images.display(),
        paths.test_labels.display(),
        out_dir.display(),
    )
}
