//! IDX-format image ingestion for the row-wise sequential digit task.
//!
//! Standard big-endian IDX layout: images carry magic `0x00000803` and three
//! dimension words (count, rows, cols); labels carry magic `0x00000801` and a
//! count. Pixels are unsigned bytes scaled to `[0, 1]` on load.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images as row-sequences: feeding row `t` of an image at step `t` turns a
/// `height x width` picture into a length-`height` sequence of
/// `width`-dimensional inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RowImageDataset {
    /// Each image is `height x width` with values in `[0, 1]`.
    pub images: Vec<DMatrix<f64>>,
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl RowImageDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        10
    }

    /// Image `i` as an input sequence: `width x height`, column `t` = row `t`.
    pub fn input_sequence(&self, i: usize) -> DMatrix<f64> {
        self.images[i].transpose()
    }

    /// Keep only the first `n` examples.
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
        self.labels.truncate(n);
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(CoreError::Format {
            path: path.display().to_string(),
            offset: bytes.len() as u64,
            message: format!("file too short for a header word at byte {offset}"),
        });
    }
    Ok(u32::from_be_bytes(
        bytes[offset..end].try_into().expect("4 bytes"),
    ))
}

fn format_err(path: &Path, offset: u64, message: String) -> CoreError {
    CoreError::Format {
        path: path.display().to_string(),
        offset,
        message,
    }
}

/// Parse an IDX image/label file pair into a row-sequence dataset.
///
/// `downsample` averages each 2x2 pixel block, halving both dimensions
/// (odd trailing rows/columns are dropped) — the desk-scale setting.
pub fn load_mnist_idx(
    images_path: &Path,
    labels_path: &Path,
    downsample: bool,
) -> Result<RowImageDataset> {
    let img_bytes = std::fs::read(images_path)
        .map_err(|e| CoreError::io(images_path.display().to_string(), e))?;
    let magic = read_be_u32(&img_bytes, 0, images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(
            images_path,
            0,
            format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = read_be_u32(&img_bytes, 4, images_path)? as usize;
    let rows = read_be_u32(&img_bytes, 8, images_path)? as usize;
    let cols = read_be_u32(&img_bytes, 12, images_path)? as usize;
    let expected = 16 + count * rows * cols;
    if img_bytes.len() != expected {
        return Err(format_err(
            images_path,
            img_bytes.len() as u64,
            format!(
                "payload truncated: expected {expected} bytes for {count} images of {rows}x{cols}, found {}",
                img_bytes.len()
            ),
        ));
    }

    let lbl_bytes = std::fs::read(labels_path)
        .map_err(|e| CoreError::io(labels_path.display().to_string(), e))?;
    let lbl_magic = read_be_u32(&lbl_bytes, 0, labels_path)?;
    if lbl_magic != LABEL_MAGIC {
        return Err(format_err(
            labels_path,
            0,
            format!("bad label magic {lbl_magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let lbl_count = read_be_u32(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_count != count {
        return Err(format_err(
            labels_path,
            4,
            format!("label count {lbl_count} does not match image count {count}"),
        ));
    }
    let lbl_expected = 8 + count;
    if lbl_bytes.len() != lbl_expected {
        return Err(format_err(
            labels_path,
            lbl_bytes.len() as u64,
            format!(
                "payload truncated: expected {lbl_expected} bytes for {count} labels, found {}",
                lbl_bytes.len()
            ),
        ));
    }

    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let (out_rows, out_cols) = if downsample {
        (rows / 2, cols / 2)
    } else {
        (rows, cols)
    };
    for i in 0..count {
        let base = 16 + i * rows * cols;
        let pixel = |r: usize, c: usize| img_bytes[base + r * cols + c] as f64 / 255.0;
        let image = if downsample {
            DMatrix::from_fn(out_rows, out_cols, |r, c| {
                (pixel(2 * r, 2 * c)
                    + pixel(2 * r, 2 * c + 1)
                    + pixel(2 * r + 1, 2 * c)
                    + pixel(2 * r + 1, 2 * c + 1))
                    / 4.0
            })
        } else {
            DMatrix::from_fn(out_rows, out_cols, |r, c| pixel(r, c))
        };
        images.push(image);
        let label = lbl_bytes[8 + i];
        if label > 9 {
            return Err(format_err(
                labels_path,
                (8 + i) as u64,
                format!("label {label} out of range 0-9"),
            ));
        }
        labels.push(label);
    }
    Ok(RowImageDataset {
        images,
        labels,
        height: out_rows,
        width: out_cols,
    })
}

/// Serialize a dataset-shaped byte set back to IDX (used to build fixtures
/// and by tests; pixels are raw bytes, labels one byte each).
pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        if img.len() != rows * cols {
            return Err(CoreError::contract(format!(
                "image has {} pixels, expected {}",
                img.len(),
                rows * cols
            )));
        }
        bytes.extend_from_slice(img);
    }
    std::fs::write(path, bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
}
