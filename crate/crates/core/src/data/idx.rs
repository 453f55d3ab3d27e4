//! IDX container I/O (MNIST family).
//!
//! Layout: a big-endian magic of two zero bytes, a type byte (`0x08` =
//! unsigned byte) and a dimension count, then one big-endian `u32` extent per
//! dimension, then the raw bytes. Gzip-compressed files (`1f 8b` prefix) are
//! decompressed transparently.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::{DataError, Dataset, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(io_err(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an unsigned-byte IDX payload, returning its extents and data.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, origin: &str) -> Result<(Vec<usize>, Vec<u8>)> {
    let truncated = |detail: String| DataError::Truncated {
        path: origin.to_string(),
        detail,
    };
    if bytes.len() < 4 {
        return Err(truncated("missing magic".into()));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if magic != expected_magic {
        return Err(DataError::BadMagic {
            path: origin.to_string(),
            found: magic,
            expected: expected_magic,
        });
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(truncated(format!("header needs {header} bytes, file has {}", bytes.len())));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < count {
        return Err(truncated(format!("expected {count} data bytes, found {}", body.len())));
    }
    Ok((dims, body[..count].to_vec()))
}

/// Loads an image/label IDX pair. Pixels are scaled by 1/255; labels become
/// one-hot rows over 10 classes.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    load_idx_with_classes(images_path, labels_path, MNIST_CLASSES)
}

pub fn load_idx_with_classes(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    classes: usize,
) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let (dims, pixels) = parse_idx(
        &read_bytes(images_path)?,
        IMAGES_MAGIC,
        &images_path.display().to_string(),
    )?;
    let (ldims, labels) = parse_idx(
        &read_bytes(labels_path)?,
        LABELS_MAGIC,
        &labels_path.display().to_string(),
    )?;
    if dims[0] != ldims[0] {
        return Err(DataError::CountMismatch {
            images: dims[0],
            labels: ldims[0],
        });
    }
    let inputs = Tensor::new(dims, pixels.iter().map(|&b| b as f64 / 255.0).collect())?;
    let labels: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_class_indices(name, inputs, &labels, classes)
}

fn write_idx(path: &Path, magic: u32, dims: &[usize], body: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + body.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| DataError::Invalid(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(body);
    File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(io_err(path))
}

/// Writes inputs as a rank-3 image file; values are stored as `round(v * 255)`.
pub fn write_idx_images(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let shape = dataset.inputs().shape();
    let dims: Vec<usize> = match shape.len() {
        3 => shape.to_vec(),
        2 => vec![shape[0], 1, shape[1]],
        _ => {
            return Err(DataError::Invalid(format!(
                "cannot store inputs of shape {shape:?} as IDX images"
            )))
        }
    };
    let body: Vec<u8> = dataset
        .inputs()
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    write_idx(path.as_ref(), IMAGES_MAGIC, &dims, &body)
}

pub fn write_idx_labels(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    if dataset.class_count() > 256 {
        return Err(DataError::Invalid("more than 256 classes".into()));
    }
    let body: Vec<u8> = dataset.class_indices().iter().map(|&c| c as u8).collect();
    write_idx(path.as_ref(), LABELS_MAGIC, &[dataset.len()], &body)
}
