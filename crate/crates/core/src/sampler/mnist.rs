//! IDX reader/writer and MNIST preprocessing: 2-pixel zero padding, then
//! scaling raw bytes from `[0, 255]` to `[-1, 1]`.

use std::fs;
use std::path::Path;

use super::{DataError, RealSource, Rng};
use crate::autodiff::Array2;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;
/// Border added on every side of each image.
pub const MNIST_PAD: usize = 2;

/// Padded, scaled, row-major flattened images and their labels.
#[derive(Debug, Clone)]
pub struct MnistData {
    pub images: Array2,
    pub labels: Vec<u8>,
    /// Height of the original (unpadded) images.
    pub rows: usize,
    /// Width of the original (unpadded) images.
    pub cols: usize,
}

impl MnistData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn padded_side(&self) -> (usize, usize) {
        (self.rows + 2 * MNIST_PAD, self.cols + 2 * MNIST_PAD)
    }

    /// Splits off the last `n` examples, e.g. for a held-out set.
    pub fn split_tail(&self, n: usize) -> (MnistData, MnistData) {
        let n = n.min(self.len());
        let cut = self.len() - n;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        let part = |idx: &[usize]| MnistData {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            rows: self.rows,
            cols: self.cols,
        };
        (part(&head), part(&tail))
    }
}

impl RealSource for MnistData {
    fn data_dim(&self) -> usize {
        self.images.cols()
    }

    /// Uniform indices with replacement.
    fn sample(&self, batch: usize, rng: &mut Rng) -> Array2 {
        let idx: Vec<usize> = (0..batch).map(|_| rng.below(self.len())).collect();
        self.images.select_rows(&idx)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.display().to_string(),
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Raw IDX image file: `(count, rows, cols, bytes)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.display().to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((n, rows, cols, bytes[16..expected].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.display().to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len() % (rows * cols), 0, "pixel buffer is not a whole number of images");
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> std::io::Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)
}

#[inline]
fn scale_pixel(p: u8) -> f64 {
    f64::from(p) / 127.5 - 1.0
}

/// Loads an IDX image/label pair, zero-pads each image by two pixels and scales to `[-1, 1]`.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<MnistData, DataError> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let (pr, pc) = (rows + 2 * MNIST_PAD, cols + 2 * MNIST_PAD);
    let background = scale_pixel(0);
    let mut images = Array2::filled(n, pr * pc, background);
    for i in 0..n {
        let src = &pixels[i * rows * cols..(i + 1) * rows * cols];
        let dst = images.row_mut(i);
        for r in 0..rows {
            for c in 0..cols {
                dst[(r + MNIST_PAD) * pc + c + MNIST_PAD] = scale_pixel(src[r * cols + c]);
            }
        }
    }
    Ok(MnistData {
        images,
        labels,
        rows,
        cols,
    })
}

/// Inverse of the preprocessing for one padded row: crops the border and maps back to bytes.
pub fn unpad_to_bytes(padded: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    let pc = cols + 2 * MNIST_PAD;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = padded[(r + MNIST_PAD) * pc + c + MNIST_PAD];
            out.push(((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}
