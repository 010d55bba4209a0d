//! Sequential MNIST from the standard IDX files.
//!
//! Images are flattened row-major into 784 single-channel steps with pixels
//! scaled to `[0, 1]`. The permuted variant applies one fixed shuffle of the
//! time axis, drawn from `perm_seed` (0 keeps the identity).

use std::fs;
use std::path::{Path, PathBuf};

use super::{LabeledSequenceBatch, TaskSpec};
use crate::config::TaskKind;
use crate::error::{DataError, Result};
use crate::rng::make_rng;
use crate::sequence::RealSequence;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_STEPS: usize = 784;

/// `(train images, train labels, test images, test labels)`.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Dataset root: the configured path, then `$DRF_DATA_DIR`, then `./data/mnist`.
pub fn resolve_data_dir(configured: &str) -> PathBuf {
    if !configured.is_empty() {
        return PathBuf::from(configured);
    }
    match std::env::var("DRF_DATA_DIR") {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from("data/mnist"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::MissingFile(path.to_path_buf()).into(),
        _ => e.into(),
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::TruncatedFile(path.to_path_buf()).into())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            value: magic,
        }
        .into());
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let need = count * rows * cols;
    let pixels = bytes.get(16..16 + need).ok_or_else(|| DataError::TruncatedFile(path.to_path_buf()))?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: pixels.to_vec(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            value: magic,
        }
        .into());
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let labels = bytes.get(8..8 + count).ok_or_else(|| DataError::TruncatedFile(path.to_path_buf()))?;
    Ok(labels.to_vec())
}

/// Time-axis permutation for the permuted task; seed 0 is the identity.
pub fn mnist_permutation(seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..MNIST_STEPS).collect();
    if seed != 0 {
        make_rng(seed).shuffle(&mut perm);
    }
    perm
}

fn to_batch(images: &IdxImages, labels: &[u8], perm: Option<&[usize]>) -> Result<LabeledSequenceBatch> {
    if images.count != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        }
        .into());
    }
    let steps = images.rows * images.cols;
    let mut values = Vec::with_capacity(images.count * steps);
    for img in images.pixels.chunks_exact(steps) {
        match perm {
            Some(p) => values.extend(p.iter().map(|&t| img[t] as f64 / 255.0)),
            None => values.extend(img.iter().map(|&v| v as f64 / 255.0)),
        }
    }
    LabeledSequenceBatch::new(
        RealSequence::new(images.count, 1, steps, values)?,
        labels.iter().map(|&l| l as usize).collect(),
    )
}

/// Train and test splits from the four IDX files in `dir`.
pub fn load_mnist_sequential(dir: &Path, spec: &TaskSpec) -> Result<(LabeledSequenceBatch, LabeledSequenceBatch)> {
    let paths: Vec<PathBuf> = MNIST_FILES.iter().map(|f| dir.join(f)).collect();
    if let Some(missing) = paths.iter().find(|p| !p.exists()) {
        return Err(DataError::MissingFile(missing.clone()).into());
    }
    let perm = match spec.kind {
        TaskKind::Psmnist => Some(mnist_permutation(spec.perm_seed)),
        _ => None,
    };
    let load = |img: &Path, lab: &Path| -> Result<LabeledSequenceBatch> {
        let images = read_idx_images(img)?;
        if images.rows * images.cols != MNIST_STEPS {
            return Err(DataError::TruncatedFile(img.to_path_buf()).into());
        }
        to_batch(&images, &read_idx_labels(lab)?, perm.as_deref())
    };
    Ok((load(&paths[0], &paths[1])?, load(&paths[2], &paths[3])?))
}
