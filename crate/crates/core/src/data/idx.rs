//! IDX (MNIST layout) decoding.
//!
//! Images: big-endian `u32` magic `0x00000803`, item count, rows, cols, then
//! `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`, item
//! count, then `count` unsigned bytes. Every error carries the byte offset
//! where decoding stopped.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, `count * rows * cols` bytes.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.pixels_per_image();
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(offset, format!("truncated header: missing {field}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0, "magic number")?;
    if magic != expected {
        return Err(format_err(
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

fn check_body(bytes: &[u8], header: usize, body: usize) -> Result<()> {
    let end = header
        .checked_add(body)
        .ok_or_else(|| format_err(header, "declared payload size overflows"))?;
    if bytes.len() < end {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {end} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > end {
        return Err(format_err(end, format!("{} trailing bytes", bytes.len() - end)));
    }
    Ok(())
}

pub fn decode_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4, "item count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let body = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| format_err(4, "declared dimensions overflow"))?;
    check_body(bytes, 16, body)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4, "item count")? as usize;
    check_body(bytes, 8, count)?;
    Ok(bytes[8..].to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset from decoded IDX buffers, keeping the first `limit`
/// samples. Pixels are scaled to `[0, 1]`; the class count is
/// `max(label) + 1`.
pub fn dataset_from_bytes(images: &[u8], labels: &[u8], limit: usize) -> Result<LabeledDataset> {
    let images = decode_images(images)?;
    let labels = decode_labels(labels)?;
    if images.count != labels.len() {
        return Err(format_err(
            4,
            format!(
                "label count {} disagrees with image count {}",
                labels.len(),
                images.count
            ),
        ));
    }
    let keep = images.count.min(limit);
    let d = images.pixels_per_image();
    let data = images.pixels[..keep * d]
        .iter()
        .map(|&px| f64::from(px) / 255.0)
        .collect();
    let clean: Vec<usize> = labels[..keep].iter().map(|&l| usize::from(l)).collect();
    let k = labels.iter().map(|&l| usize::from(l) + 1).max().unwrap_or(1);
    LabeledDataset::new(Matrix::from_vec(keep, d, data)?, clean, None, k)
}

pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    dataset_from_bytes(&images, &labels, limit)
}
