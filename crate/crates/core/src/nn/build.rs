//! Builders for the two stock architectures.

use serde::{Deserialize, Serialize};

use super::{Activation, Conv2d, Dense, Layer, Model, NnError, Result, INIT_STREAM};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub classes: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub dropout: f64,
}

fn default_activation() -> Activation {
    Activation::elu()
}

/// Three `[conv 3x3 -> activation -> maxpool 2]` blocks with channels
/// `c, 2c, 4c`, then flatten, an optional hidden dense layer, and the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNetSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub classes: usize,
    #[serde(default)]
    pub dense_width: Option<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl ConvNetSpec {
    pub fn new(channels: usize, height: usize, width: usize, base_channels: usize, classes: usize) -> Self {
        Self {
            channels,
            height,
            width,
            base_channels,
            classes,
            dense_width: None,
            dropout: 0.0,
            activation: Activation::elu(),
        }
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
fn he_dense(inputs: usize, outputs: usize, rng: &mut Rng) -> Dense {
    let mut d = Dense::zeros(inputs, outputs);
    let std = (2.0 / inputs as f64).sqrt();
    for w in d.weight.data_mut() {
        *w = std * rng.normal();
    }
    d
}

fn he_conv(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut Rng) -> Conv2d {
    let mut c = Conv2d::zeros(in_ch, out_ch, kernel, 1);
    let std = (2.0 / (in_ch * kernel * kernel) as f64).sqrt();
    for w in c.weight.data_mut() {
        *w = std * rng.normal();
    }
    c
}

pub fn build_mlp(spec: &MlpSpec, seed: u64) -> Result<Model> {
    if spec.in_dim == 0 || spec.classes == 0 || spec.hidden.contains(&0) {
        return Err(NnError::InvalidConfig(format!(
            "mlp dims must be positive: in={} hidden={:?} classes={}",
            spec.in_dim, spec.hidden, spec.classes
        )));
    }
    let mut rng = Rng::with_stream(seed, INIT_STREAM);
    let mut layers = Vec::new();
    let mut width = spec.in_dim;
    for &h in &spec.hidden {
        layers.push(Layer::Dense(he_dense(width, h, &mut rng)));
        layers.push(Layer::Activation(spec.activation));
        if spec.dropout > 0.0 {
            layers.push(Layer::Dropout { rate: spec.dropout });
        }
        width = h;
    }
    layers.push(Layer::Dense(he_dense(width, spec.classes, &mut rng)));
    layers.push(Layer::Softmax);
    Model::new(vec![spec.in_dim], layers, seed)
}

pub fn build_convnet(spec: &ConvNetSpec, seed: u64) -> Result<Model> {
    if spec.channels == 0 || spec.base_channels == 0 || spec.classes == 0 {
        return Err(NnError::InvalidConfig(format!("convnet dims must be positive: {spec:?}")));
    }
    let mut rng = Rng::with_stream(seed, INIT_STREAM);
    let mut layers = Vec::new();
    let mut in_ch = spec.channels;
    for block in 0..3 {
        let out_ch = spec.base_channels << block;
        layers.push(Layer::Conv2d(he_conv(in_ch, out_ch, 3, &mut rng)));
        layers.push(Layer::Activation(spec.activation));
        layers.push(Layer::MaxPool { size: 2 });
        in_ch = out_ch;
    }
    layers.push(Layer::Flatten);
    // Shape-check the conv stack before sizing the dense layers.
    let trunk = Model::new(
        vec![spec.channels, spec.height, spec.width],
        layers.iter().cloned().chain([Layer::Softmax]).collect(),
        seed,
    )?;
    let flat = trunk.shape_trace()?.last().expect("non-empty")[0];
    let mut width = flat;
    if let Some(hidden) = spec.dense_width {
        layers.push(Layer::Dense(he_dense(width, hidden, &mut rng)));
        layers.push(Layer::Activation(spec.activation));
        width = hidden;
    }
    if spec.dropout > 0.0 {
        layers.push(Layer::Dropout { rate: spec.dropout });
    }
    layers.push(Layer::Dense(he_dense(width, spec.classes, &mut rng)));
    layers.push(Layer::Softmax);
    Model::new(vec![spec.channels, spec.height, spec.width], layers, seed)
}
