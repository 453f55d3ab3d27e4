use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, Result};
use crate::data::{self, Dataset, SplitSpec};
use crate::losses::LossFunction;
use crate::nn::{build_convnet, build_mlp, Activation, ConvNetSpec, MlpSpec, Model};
use crate::optim::{LrSchedule, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// An IDX image/label pair. `limit` keeps the first `limit` samples before
    /// splitting. With `validation` set, that pair is the validation set and
    /// the split fraction is ignored.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        validation: Option<IdxPair>,
    },
    Blobs {
        classes: usize,
        dims: usize,
        per_class: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdxPair {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub limit: Option<usize>,
}

pub const MNIST_SUBSET_DIR: &str = "data/mnist-subset";

impl DatasetSpec {
    /// Finds `*images-idx3-ubyte*` and `*labels-idx1-ubyte*` inside `dir`.
    pub fn idx_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|source| HarnessError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut names: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        names.sort();
        let find = |needle: &str| {
            names
                .iter()
                .find(|p| p.file_name().is_some_and(|n| n.to_string_lossy().contains(needle)))
                .cloned()
                .ok_or_else(|| HarnessError::Config(format!("no *{needle}* file in {}", dir.display())))
        };
        Ok(DatasetSpec::Idx {
            images: find("images-idx3-ubyte")?,
            labels: find("labels-idx1-ubyte")?,
            limit: None,
            validation: None,
        })
    }

    pub fn blobs(classes: usize, dims: usize, per_class: usize, spread: f64) -> Self {
        DatasetSpec::Blobs {
            classes,
            dims,
            per_class,
            spread,
            seed: 0,
        }
    }

    /// Training pool, plus an explicit validation set when one is configured.
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>)> {
        match self {
            DatasetSpec::Idx {
                images,
                labels,
                limit,
                validation,
            } => {
                let mut train = data::load_idx(images, labels)?;
                if let Some(n) = limit {
                    train = train.take(*n);
                }
                let val = match validation {
                    Some(pair) => {
                        let mut v = data::load_idx(&pair.images, &pair.labels)?;
                        if let Some(n) = pair.limit {
                            v = v.take(n);
                        }
                        Some(v)
                    }
                    None => None,
                };
                Ok((train, val))
            }
            DatasetSpec::Blobs {
                classes,
                dims,
                per_class,
                spread,
                seed,
            } => Ok((data::synth_blobs(*classes, *dims, *per_class, *spread, *seed)?, None)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Input width and class count come from the dataset. An empty `hidden`
    /// list is logistic regression.
    Mlp {
        #[serde(default)]
        hidden: Vec<usize>,
        #[serde(default = "default_activation")]
        activation: Activation,
        #[serde(default)]
        dropout: f64,
    },
    Convnet {
        base_channels: usize,
        #[serde(default)]
        dense_width: Option<usize>,
        #[serde(default)]
        dropout: f64,
        #[serde(default = "default_activation")]
        activation: Activation,
    },
}

fn default_activation() -> Activation {
    Activation::elu()
}

impl ModelSpec {
    pub fn logistic() -> Self {
        ModelSpec::Mlp {
            hidden: Vec::new(),
            activation: Activation::elu(),
            dropout: 0.0,
        }
    }

    pub fn build(&self, feature_shape: &[usize], classes: usize, seed: u64) -> Result<Model> {
        let model = match self {
            ModelSpec::Mlp {
                hidden,
                activation,
                dropout,
            } => build_mlp(
                &MlpSpec {
                    in_dim: feature_shape.iter().product(),
                    hidden: hidden.clone(),
                    classes,
                    activation: *activation,
                    dropout: *dropout,
                },
                seed,
            )?,
            ModelSpec::Convnet {
                base_channels,
                dense_width,
                dropout,
                activation,
            } => {
                let (channels, height, width) = match *feature_shape {
                    [h, w] => (1, h, w),
                    [c, h, w] => (c, h, w),
                    _ => {
                        return Err(HarnessError::Config(format!(
                            "convnet needs image-shaped inputs, got {feature_shape:?}"
                        )))
                    }
                };
                let mut spec = ConvNetSpec::new(channels, height, width, *base_channels, classes);
                spec.dense_width = *dense_width;
                spec.dropout = *dropout;
                spec.activation = *activation;
                build_convnet(&spec, seed)?
            }
        };
        Ok(model)
    }
}

fn default_batch_size() -> usize {
    64
}
fn default_split() -> f64 {
    0.8
}
fn default_repetitions() -> usize {
    1
}
fn default_variance_window() -> usize {
    10
}

/// Everything that determines a run. Serializes to the config file format
/// (TOML or JSON) with these exact field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub loss: LossFunction,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub schedule: LrSchedule,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Train fraction of the split.
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default)]
    pub stratified: bool,
    /// Independent seeded repetitions (`seed`, `seed + 1`, ...).
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Trailing epochs used for the validation-accuracy variance.
    #[serde(default = "default_variance_window")]
    pub variance_window: usize,
}

impl TrainConfig {
    /// Logistic regression on 3-class blobs, Adma(0.3) with Adam(1e-2).
    pub fn blobs_default() -> Self {
        Self {
            dataset: DatasetSpec::blobs(3, 2, 100, 0.05),
            model: ModelSpec::logistic(),
            loss: LossFunction::adma(0.3).expect("valid a"),
            optimizer: OptimizerKind::adam(),
            lr: 1e-2,
            schedule: LrSchedule::Constant,
            epochs: 200,
            batch_size: default_batch_size(),
            seed: 0,
            weight_decay: 0.0,
            split: default_split(),
            stratified: false,
            repetitions: 1,
            variance_window: default_variance_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be at least 1".into()));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(HarnessError::Config(format!("split {} outside (0, 1)", self.split)));
        }
        if self.repetitions == 0 {
            return Err(HarnessError::Config("repetitions must be at least 1".into()));
        }
        self.schedule.validate()?;
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split,
            seed: self.seed,
            stratified: self.stratified,
        }
    }

    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        let config: Self = parsed.map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON encoding, lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = TrainConfig::blobs_default();
        cfg.schedule = LrSchedule::StepDecay {
            factor: 0.5,
            every_n_epochs: 10,
        };
        let text = cfg.to_toml().unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let text = r#"
            lr = 0.001
            epochs = 3
            [dataset]
            kind = "blobs"
            classes = 3
            dims = 2
            per_class = 10
            spread = 0.1
            [model]
            kind = "mlp"
            hidden = [8]
            [loss]
            kind = { kind = "adma", a = 0.26 }
            [optimizer]
            kind = "sgd"
            momentum = 0.9
            nesterov = true
        "#;
        let cfg: TrainConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.split, 0.8);
        assert_eq!(cfg.loss.epsilon, 1e-7);
        assert_eq!(cfg.loss.to_string(), "adma(0.26)");
        assert!(matches!(cfg.optimizer, OptimizerKind::Sgd { nesterov: true, .. }));
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = TrainConfig::blobs_default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = TrainConfig::blobs_default();
        cfg.split = 1.0;
        assert!(cfg.validate().is_err());
        let text = "lr = 0.1\nepochs = 1\n[dataset]\nkind = \"blobs\"\nclasses = 3\ndims = 2\nper_class = 4\nspread = 0.1\n[model]\nkind = \"mlp\"\n[loss]\nkind = { kind = \"adma\", a = 1.5 }\n[optimizer]\nkind = \"adam\"\n";
        assert!(toml::from_str::<TrainConfig>(text).is_err());
    }
}
