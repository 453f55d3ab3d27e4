//! A minimal differentiable network: an ordered list of layers ending in a
//! softmax head, with a reverse-mode backward pass.
//!
//! Samples are row-major. Dense layers take `(n, features)`; convolution and
//! pooling take `(n, channels, height, width)`. The model reshapes incoming
//! batches to `(n, input_shape...)` before the first layer, so a flat
//! `(n, 784)` batch feeds a `[1, 28, 28]` convnet unchanged.

pub mod build;
pub mod checkpoint;
pub mod layers;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{build_convnet, build_mlp, ConvNetSpec, MlpSpec};
pub use layers::{Activation, Cache, Conv2d, Dense, Layer};

use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer} ({kind}) cannot take input of shape {shape:?}")]
    ShapeMismatch {
        layer: usize,
        kind: &'static str,
        shape: Vec<usize>,
    },
    #[error("backward called without a preceding training-mode forward")]
    BackwardBeforeForward,
    #[error("spatial extent underflow: {0}")]
    SpatialUnderflow(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Mutable view of one parameter tensor and its gradient.
pub struct ParamMut<'a> {
    pub name: String,
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
    /// Weight tensors take L2 decay; biases do not.
    pub decay: bool,
}

#[derive(Debug, Clone)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    mode: Mode,
    dropout_rng: Rng,
    caches: Option<Vec<Cache>>,
}

/// Stream ids carved out of the model seed.
pub(crate) const INIT_STREAM: u64 = 1;
pub(crate) const DROPOUT_STREAM: u64 = 2;

impl Model {
    /// Validates that the layers chain from `input_shape` and end in softmax.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "input shape {input_shape:?} must be non-empty with positive extents"
            )));
        }
        if !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(NnError::InvalidConfig("final layer must be softmax".into()));
        }
        for layer in &layers {
            if let Layer::Dropout { rate } = layer {
                if !(0.0..1.0).contains(rate) {
                    return Err(NnError::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
                }
            }
        }
        let model = Self {
            input_shape,
            layers,
            mode: Mode::Train,
            dropout_rng: Rng::with_stream(seed, DROPOUT_STREAM),
            caches: None,
        };
        model.shape_trace()?;
        Ok(model)
    }

    /// Per-sample shapes: the input followed by every layer's output.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let current = shapes.last().expect("non-empty");
            match layer.output_shape(current) {
                Some(next) => shapes.push(next),
                None => {
                    return Err(match layer {
                        Layer::Conv2d(_) | Layer::MaxPool { .. } if current.len() == 3 => {
                            NnError::SpatialUnderflow(format!(
                                "layer {i} ({}) receives {current:?}",
                                layer.kind_name()
                            ))
                        }
                        _ => NnError::ShapeMismatch {
                            layer: i,
                            kind: layer.kind_name(),
                            shape: current.clone(),
                        },
                    })
                }
            }
        }
        Ok(shapes)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.shape_trace()
            .ok()
            .and_then(|s| s.last().map(|s| s[0]))
            .unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Eval {
            self.caches = None;
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn reshape_batch(&self, batch: &Tensor) -> Result<Tensor> {
        let features: usize = self.input_shape.iter().product();
        if batch.rank() < 1 || batch.row_len() != features {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                kind: self.layers[0].kind_name(),
                shape: batch.shape().to_vec(),
            });
        }
        let mut shape = vec![batch.rows()];
        shape.extend_from_slice(&self.input_shape);
        Ok(batch.reshape(&shape)?)
    }

    /// Forward pass. In train mode, caches activations for [`Model::backward`]
    /// and draws dropout masks.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        let train = self.mode == Mode::Train;
        let mut x = self.reshape_batch(batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x, train, Some(&mut self.dropout_rng))?;
            if train {
                caches.push(cache);
            }
            x = y;
        }
        self.caches = train.then_some(caches);
        Ok(x)
    }

    /// Eval-mode forward that leaves the model untouched.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut x = self.reshape_batch(batch)?;
        for layer in &self.layers {
            x = layer.forward(&x, false, None)?.0;
        }
        Ok(x)
    }

    /// Backpropagates `grad` (gradient of the batch loss with respect to the
    /// predictions) and stores every parameter gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let caches = self.caches.take().ok_or(NnError::BackwardBeforeForward)?;
        let mut g = grad.clone();
        for (i, (layer, cache)) in self.layers.iter_mut().zip(&caches).enumerate().rev() {
            // nothing upstream of layer 0 needs a gradient
            match layer.backward(cache, &g, i > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.params_mut(i))
            .collect()
    }

    /// Parameter tensors in a fixed order (layer order, weight then bias).
    pub fn param_values(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|(v, _)| v))
            .collect()
    }

    pub fn param_grads(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|(_, g)| g))
            .collect()
    }

    pub(crate) fn param_values_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.values_mut()).collect()
    }

    /// Flat copy of every parameter in [`Model::param_values`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.param_values()
            .into_iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(NnError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.param_values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.param_grads()
            .into_iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}
