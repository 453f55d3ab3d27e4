//! Single-file model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | offset    | size | field                                             |
//! |-----------|------|---------------------------------------------------|
//! | 0         | 8    | magic `ADMACKPT`                                  |
//! | 8         | 4    | format version, `u32` (currently 1)               |
//! | 12        | 4    | manifest length `L` in bytes, `u32`               |
//! | 16        | L    | UTF-8 JSON manifest (input shape, layers, blocks) |
//! | 16 + L    | 8*N  | parameter values as `f64`, block after block      |
//!
//! Parameter blocks appear in manifest order (layer order, weight before
//! bias) and the file ends right after the last block.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Activation, Conv2d, Dense, Layer, Model, NnError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ADMACKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerEntry {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Maxpool {
        size: usize,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
    Activation {
        activation: Activation,
    },
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    input_shape: Vec<usize>,
    layers: Vec<LayerEntry>,
    blocks: Vec<Block>,
}

fn entry(layer: &Layer) -> LayerEntry {
    match layer {
        Layer::Dense(d) => LayerEntry::Dense {
            inputs: d.inputs(),
            outputs: d.outputs(),
        },
        Layer::Conv2d(c) => LayerEntry::Conv2d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            stride: c.stride,
        },
        Layer::MaxPool { size } => LayerEntry::Maxpool { size: *size },
        Layer::Flatten => LayerEntry::Flatten,
        Layer::Dropout { rate } => LayerEntry::Dropout { rate: *rate },
        Layer::Activation(a) => LayerEntry::Activation { activation: *a },
        Layer::Softmax => LayerEntry::Softmax,
    }
}

fn layer(entry: &LayerEntry) -> Layer {
    match *entry {
        LayerEntry::Dense { inputs, outputs } => Layer::Dense(Dense::zeros(inputs, outputs)),
        LayerEntry::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => Layer::Conv2d(Conv2d::zeros(in_channels, out_channels, kernel, stride)),
        LayerEntry::Maxpool { size } => Layer::MaxPool { size },
        LayerEntry::Flatten => Layer::Flatten,
        LayerEntry::Dropout { rate } => Layer::Dropout { rate },
        LayerEntry::Activation { activation } => Layer::Activation(activation),
        LayerEntry::Softmax => Layer::Softmax,
    }
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let mut blocks = Vec::new();
    for (i, l) in model.layers().iter().enumerate() {
        for (j, (value, _)) in l.params().into_iter().enumerate() {
            let part = if j == 0 { "weight" } else { "bias" };
            blocks.push(Block {
                name: format!("{i}.{}.{part}", l.kind_name()),
                shape: value.shape().to_vec(),
            });
        }
    }
    let manifest = Manifest {
        input_shape: model.input_shape().to_vec(),
        layers: model.layers().iter().map(entry).collect(),
        blocks,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| NnError::Checkpoint("manifest too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.param_values() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| NnError::Checkpoint("truncated header".into()))?;
    if &header[..8] != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes")) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|_| NnError::Checkpoint("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| NnError::Checkpoint(format!("manifest: {e}")))?;

    let layers = manifest.layers.iter().map(layer).collect();
    let mut model = Model::new(manifest.input_shape.clone(), layers, 0)?;
    let mut values = model.param_values_mut();
    if values.len() != manifest.blocks.len() {
        return Err(NnError::Checkpoint(format!(
            "manifest lists {} blocks, layers need {}",
            manifest.blocks.len(),
            values.len()
        )));
    }
    for (t, block) in values.iter_mut().zip(&manifest.blocks) {
        if t.shape() != block.shape.as_slice() {
            return Err(NnError::Checkpoint(format!(
                "block {} has shape {:?}, layer expects {:?}",
                block.name,
                block.shape,
                t.shape()
            )));
        }
        let mut buf = vec![0u8; 8 * t.len()];
        r.read_exact(&mut buf)
            .map_err(|_| NnError::Checkpoint(format!("truncated block {}", block.name)))?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        **t = Tensor::new(block.shape.clone(), data)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_convnet, build_mlp, ConvNetSpec, MlpSpec};

    #[test]
    fn round_trip_preserves_parameters_and_predictions() {
        let mut spec = ConvNetSpec::new(1, 22, 22, 2, 3);
        spec.dense_width = Some(5);
        let model = build_convnet(&spec, 4).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.layers(), model.layers());
        let x = Tensor::full(&[1, 484], 0.3);
        assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
    }

    #[test]
    fn header_layout() {
        let model = build_mlp(
            &MlpSpec {
                in_dim: 2,
                hidden: vec![],
                classes: 2,
                activation: Activation::Relu,
                dropout: 0.0,
            },
            0,
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"ADMACKPT");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + len + 8 * 6);
        let first = f64::from_le_bytes(bytes[16 + len..24 + len].try_into().unwrap());
        assert_eq!(first, model.flat_params()[0]);
    }

    #[test]
    fn rejects_corruption() {
        let model = build_mlp(
            &MlpSpec {
                in_dim: 2,
                hidden: vec![3],
                classes: 2,
                activation: Activation::Relu,
                dropout: 0.0,
            },
            0,
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(read_checkpoint(long.as_slice()).is_err());
    }
}
