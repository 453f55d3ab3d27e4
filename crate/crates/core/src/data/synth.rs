//! Gaussian blobs for fast, fully synthetic experiments.

use std::f64::consts::PI;

use super::{DataError, Dataset, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Class centers inside the unit cube: a regular polygon of radius 0.35 around
/// 0.5 in the first two coordinates (other coordinates at 0.5), or evenly
/// spaced points on `[0.15, 0.85]` when `dims == 1`.
pub fn blob_centers(classes: usize, dims: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            let mut c = vec![0.5; dims];
            if dims == 1 {
                c[0] = 0.15 + 0.7 * k as f64 / (classes - 1) as f64;
            } else {
                let theta = 2.0 * PI * k as f64 / classes as f64;
                c[0] = 0.5 + 0.35 * theta.cos();
                c[1] = 0.5 + 0.35 * theta.sin();
            }
            c
        })
        .collect()
}

/// `per_class` samples per class drawn from `N(center, spread^2 I)`, clipped
/// to `[0, 1]`. Samples are grouped by class.
pub fn synth_blobs(classes: usize, dims: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || per_class < 1 || dims < 1 || !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::Invalid(format!(
            "blobs need classes >= 2, per_class >= 1, dims >= 1, spread >= 0 (got {classes}, {per_class}, {dims}, {spread})"
        )));
    }
    let centers = blob_centers(classes, dims);
    let mut rng = Rng::new(seed);
    let mut inputs = Vec::with_capacity(classes * per_class * dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            inputs.extend(center.iter().map(|&c| (c + spread * rng.normal()).clamp(0.0, 1.0)));
            labels.push(k);
        }
    }
    let inputs = Tensor::new(vec![classes * per_class, dims], inputs)?;
    Dataset::from_class_indices(format!("blobs{classes}x{dims}"), inputs, &labels, classes)
}
