//! Datasets: IDX ingestion, synthetic blobs, deterministic splits and batching.

pub mod idx;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use synth::synth_blobs;

use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated IDX file ({detail})")]
    Truncated { path: String, detail: String },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside 0..{classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("split fraction {fraction} leaves the {side} side empty for {n} samples")]
    EmptySplit {
        fraction: f64,
        side: &'static str,
        n: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Inputs `(n, feature shape...)` in `[0, 1]` and one-hot labels `(n, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    inputs: Tensor,
    labels: Tensor,
    class_count: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Tensor, labels: Tensor) -> Result<Self> {
        if labels.rank() != 2 || inputs.rank() < 2 || inputs.rows() != labels.rows() {
            return Err(DataError::Invalid(format!(
                "inputs {:?} and labels {:?} do not pair up",
                inputs.shape(),
                labels.shape()
            )));
        }
        let class_count = labels.shape()[1];
        for r in 0..labels.rows() {
            let row = labels.row(r);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != class_count {
                return Err(DataError::Invalid(format!("label row {r} is not one-hot")));
            }
        }
        if let Some(i) = inputs.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Invalid(format!(
                "input value {} at flat index {i} outside [0, 1]",
                inputs.data()[i]
            )));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            labels,
            class_count,
        })
    }

    /// Builds one-hot labels from class indices.
    pub fn from_class_indices(name: impl Into<String>, inputs: Tensor, classes: &[usize], class_count: usize) -> Result<Self> {
        let mut labels = vec![0.0; classes.len() * class_count];
        for (i, &c) in classes.iter().enumerate() {
            if c >= class_count {
                return Err(DataError::LabelOutOfRange {
                    index: i,
                    label: c,
                    classes: class_count,
                });
            }
            labels[i * class_count + c] = 1.0;
        }
        let labels = Tensor::new(vec![classes.len(), class_count], labels)?;
        Self::new(name, inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Per-sample feature shape (without the leading sample axis).
    pub fn feature_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn class_indices(&self) -> Vec<usize> {
        self.labels.argmax_rows()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            inputs: self.inputs.select_rows(indices),
            labels: self.labels.select_rows(indices),
            class_count: self.class_count,
        }
    }

    /// First `n` samples (all of them when `n >= len`).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Iterator over mini-batches covering the dataset once. `shuffle_seed`
    /// of `None` keeps the stored order; otherwise the permutation depends on
    /// `(seed, epoch)` only.
    pub fn batches(&self, batch_size: usize, shuffle_seed: Option<u64>, epoch: usize) -> Batches<'_> {
        let order = match shuffle_seed {
            Some(seed) => epoch_permutation(seed, epoch, self.len()),
            None => (0..self.len()).collect(),
        };
        Batches {
            dataset: self,
            order,
            batch_size: batch_size.max(1),
            next: 0,
        }
    }
}

/// Each epoch draws from its own stream of `seed`.
pub fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    Rng::with_stream(seed, 0x5EED_0000 + epoch as u64).permutation(n)
}

pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Tensor);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let idx = &self.order[self.next..end];
        self.next = end;
        Some((
            self.dataset.inputs.select_rows(idx),
            self.dataset.labels.select_rows(idx),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratified: bool,
}

/// Index sets for a split; train and validation are disjoint and exhaustive.
pub fn split_indices(dataset: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.train_fraction;
    let n = dataset.len();
    if !(f > 0.0 && f < 1.0) {
        return Err(DataError::Invalid(format!("train fraction {f} outside (0, 1)")));
    }
    let mut rng = Rng::with_stream(spec.seed, 0x5B17);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    if spec.stratified {
        let classes = dataset.class_indices();
        for c in 0..dataset.class_count() {
            let mut members: Vec<usize> = (0..n).filter(|&i| classes[i] == c).collect();
            rng.shuffle(&mut members);
            let k = (f * members.len() as f64).round() as usize;
            train.extend_from_slice(&members[..k]);
            val.extend_from_slice(&members[k..]);
        }
        // keep batches mixed rather than grouped by class
        rng.shuffle(&mut train);
        rng.shuffle(&mut val);
    } else {
        let order = rng.permutation(n);
        let k = (f * n as f64).round() as usize;
        train.extend_from_slice(&order[..k]);
        val.extend_from_slice(&order[k..]);
    }
    if train.is_empty() {
        return Err(DataError::EmptySplit { fraction: f, side: "train", n });
    }
    if val.is_empty() {
        return Err(DataError::EmptySplit { fraction: f, side: "validation", n });
    }
    Ok((train, val))
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(dataset, spec)?;
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize, classes: usize) -> Dataset {
        let inputs = Tensor::new(vec![n, 2], (0..2 * n).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        Dataset::from_class_indices("toy", inputs, &labels, classes).unwrap()
    }

    #[test]
    fn split_sizes() {
        let d = toy(1000, 4);
        let spec = SplitSpec { train_fraction: 0.8, seed: 1, stratified: false };
        let (a, b) = split(&d, &spec).unwrap();
        assert_eq!((a.len(), b.len()), (800, 200));
        let spec = SplitSpec { train_fraction: 0.6, seed: 1, stratified: true };
        let (a, b) = split(&d, &spec).unwrap();
        assert_eq!((a.len(), b.len()), (600, 400));
    }

    #[test]
    fn split_is_deterministic() {
        let d = toy(100, 3);
        let spec = SplitSpec { train_fraction: 0.7, seed: 9, stratified: true };
        assert_eq!(split_indices(&d, &spec).unwrap(), split_indices(&d, &spec).unwrap());
    }

    #[test]
    fn split_rejects_empty_side() {
        let d = toy(3, 3);
        let spec = SplitSpec { train_fraction: 0.1, seed: 0, stratified: false };
        assert!(matches!(split(&d, &spec), Err(DataError::EmptySplit { side: "train", .. })));
        let spec = SplitSpec { train_fraction: 1.0, seed: 0, stratified: false };
        assert!(split(&d, &spec).is_err());
    }

    #[test]
    fn batch_sizes_cover_dataset() {
        let d = toy(100, 2);
        let sizes: Vec<usize> = d.batches(64, None, 0).map(|(x, _)| x.rows()).collect();
        assert_eq!(sizes, vec![64, 36]);
    }

    #[test]
    fn unshuffled_batches_keep_order() {
        let d = toy(10, 2);
        let (x, _) = d.batches(10, None, 0).next().unwrap();
        assert_eq!(&x, d.inputs());
    }

    #[test]
    fn epochs_get_distinct_reproducible_orders() {
        let d = toy(50, 2);
        let e0 = d.batches(8, Some(3), 0).order().to_vec();
        let e1 = d.batches(8, Some(3), 1).order().to_vec();
        assert_ne!(e0, e1);
        assert_eq!(e0, d.batches(8, Some(3), 0).order().to_vec());
    }

    #[test]
    fn rejects_bad_labels_and_inputs() {
        let inputs = Tensor::zeros(&[2, 2]);
        let labels = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(Dataset::new("x", inputs.clone(), labels).is_err());
        let big = Tensor::full(&[2, 2], 2.0);
        assert!(Dataset::from_class_indices("x", big, &[0, 1], 2).is_err());
        assert!(Dataset::from_class_indices("x", inputs, &[0, 5], 2).is_err());
    }

    proptest! {
        #[test]
        fn split_disjoint_exhaustive(n in 4usize..200, classes in 2usize..5, f in 0.2f64..0.8, seed in any::<u64>(), stratified in any::<bool>()) {
            let d = toy(n, classes);
            let spec = SplitSpec { train_fraction: f, seed, stratified };
            if let Ok((train, val)) = split_indices(&d, &spec) {
                let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                if stratified {
                    let cls = d.class_indices();
                    for c in 0..classes {
                        let total = cls.iter().filter(|&&x| x == c).count() as f64;
                        let got = train.iter().filter(|&&i| cls[i] == c).count() as f64;
                        prop_assert!((got - f * total).abs() <= 1.0);
                    }
                }
                let (a, b) = split(&d, &spec).unwrap();
                for part in [&a, &b] {
                    for r in 0..part.len() {
                        prop_assert_eq!(part.labels().row(r).iter().sum::<f64>(), 1.0);
                    }
                }
            }
        }
    }
}
