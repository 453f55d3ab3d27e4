use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::{csv_err, mean};
use super::{io_err, HarnessError, Result};
use crate::losses::LossFunction;
use crate::nn::{build_convnet, build_mlp, Activation, Conv2d, ConvNetSpec, Dense, Layer, MlpSpec, Mode, Model};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-6;
/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. Central differences with
/// `GRADCHECK_STEP` carry about `1e-10` of rounding error on an O(1) loss, so
/// gradients below the floor are judged on absolute error instead.
pub const GRADCHECK_DENOM_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_DENOM_FLOOR)
}

fn batch_loss(model: &mut Model, loss: &LossFunction, x: &Tensor, y: &Tensor) -> Result<f64> {
    let p = model.forward(x)?;
    Ok(loss.batch_value_and_grad(&p, y)?.0)
}

/// Compares backprop gradients of the mean batch loss against central
/// differences for every parameter. Each evaluation starts from a clone of
/// `model`, so all of them see the same dropout masks. Returns the relative
/// error per parameter.
pub fn gradcheck_model(model: &Model, loss: &LossFunction, x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
    let mut base = model.clone();
    base.set_mode(Mode::Train);

    let mut m = base.clone();
    let p = m.forward(x)?;
    let (_, g) = loss.batch_value_and_grad(&p, y)?;
    m.backward(&g)?;
    let analytic = m.flat_grads();

    let theta = base.flat_params();
    let mut errors = Vec::with_capacity(theta.len());
    let mut shifted = theta.clone();
    for (i, &a) in analytic.iter().enumerate() {
        shifted[i] = theta[i] + GRADCHECK_STEP;
        let mut plus = base.clone();
        plus.set_flat_params(&shifted)?;
        let f_plus = batch_loss(&mut plus, loss, x, y)?;
        shifted[i] = theta[i] - GRADCHECK_STEP;
        let mut minus = base.clone();
        minus.set_flat_params(&shifted)?;
        let f_minus = batch_loss(&mut minus, loss, x, y)?;
        shifted[i] = theta[i];
        let numeric = (f_plus - f_minus) / (2.0 * GRADCHECK_STEP);
        errors.push(relative_error(a, numeric));
    }
    Ok(errors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub architecture: String,
    pub loss: String,
    pub params: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tolerance
    }

    /// `Err(GradcheckFailed)` when any entry exceeds the tolerance.
    pub fn check(&self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(HarnessError::GradcheckFailed {
                max_rel_err: self.max_rel_err(),
                tolerance: self.tolerance,
            })
        }
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<14} {:<16} {:>7} {:>12} {:>12}\n", "architecture", "loss", "params", "max_rel", "mean_rel");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<14} {:<16} {:>7} {:>12.3e} {:>12.3e}",
                e.architecture, e.loss, e.params, e.max_rel_err, e.mean_rel_err
            );
        }
        let _ = writeln!(
            out,
            "{}: max relative error {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_err(),
            self.tolerance
        );
        out
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let path = out_dir.join("gradcheck.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for e in &self.entries {
            w.serialize(e).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(io_err(&path))
    }
}

fn randomize(model: &mut Model, rng: &mut Rng, scale: f64) {
    let mut flat = model.flat_params();
    for v in &mut flat {
        *v = scale * rng.normal();
    }
    model.set_flat_params(&flat).expect("same length");
}

/// Small networks that together cover every layer kind and activation.
pub fn gradcheck_architectures(seed: u64) -> Result<Vec<(String, Model)>> {
    let mut rng = Rng::with_stream(seed, 0x6C4E);
    let mlp = |hidden: Vec<usize>, activation: Activation, dropout: f64| {
        build_mlp(
            &MlpSpec {
                in_dim: 6,
                hidden,
                classes: 4,
                activation,
                dropout,
            },
            seed,
        )
    };
    let mut dense = mlp(vec![], Activation::Relu, 0.0)?;
    // He init leaves biases at zero; give them values so their gradients are exercised fully.
    randomize(&mut dense, &mut rng, 0.5);
    let mut convnet_spec = ConvNetSpec::new(1, 22, 22, 2, 3);
    convnet_spec.dense_width = Some(4);
    convnet_spec.dropout = 0.25;
    let mut convnet = build_convnet(&convnet_spec, seed)?;
    randomize(&mut convnet, &mut rng, 0.4);
    let mut strided = Model::new(
        vec![2, 9, 9],
        vec![
            Layer::Conv2d(Conv2d::zeros(2, 3, 3, 2)),
            Layer::Activation(Activation::LeakyRelu { alpha: 0.1 }),
            Layer::MaxPool { size: 2 },
            Layer::Flatten,
            Layer::Dense(Dense::zeros(12, 3)),
            Layer::Softmax,
        ],
        seed,
    )?;
    randomize(&mut strided, &mut rng, 0.5);
    Ok(vec![
        ("dense".into(), dense),
        ("mlp_elu".into(), mlp(vec![5, 5], Activation::elu(), 0.3)?),
        ("mlp_relu".into(), mlp(vec![7], Activation::Relu, 0.0)?),
        ("convnet".into(), convnet),
        ("conv_strided".into(), strided),
    ])
}

pub fn gradcheck_losses() -> Vec<LossFunction> {
    vec![
        LossFunction::adma(0.26).expect("valid a"),
        LossFunction::adma(0.5).expect("valid a"),
        LossFunction::adma(0.9).expect("valid a"),
        LossFunction::cce(),
        LossFunction::mse(),
        LossFunction::squared_hinge(),
    ]
}

/// Random inputs in `[0, 1)` and random one-hot labels for `model`.
pub fn random_batch(model: &Model, batch: usize, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    let features: usize = model.input_shape().iter().product();
    let classes = model.classes();
    let x = Tensor::new(vec![batch, features], (0..batch * features).map(|_| rng.uniform()).collect())?;
    let mut y = vec![0.0; batch * classes];
    for r in 0..batch {
        y[r * classes + rng.below(classes)] = 1.0;
    }
    Ok((x, Tensor::new(vec![batch, classes], y)?))
}

/// Gradient check of every stock architecture under every loss.
pub fn gradcheck(seed: u64, batch: usize) -> Result<GradcheckReport> {
    let mut rng = Rng::with_stream(seed, 0x6C4F);
    let mut entries = Vec::new();
    for (name, model) in gradcheck_architectures(seed)? {
        let (x, y) = random_batch(&model, batch.max(1), &mut rng)?;
        for loss in gradcheck_losses() {
            let errors = gradcheck_model(&model, &loss, &x, &y)?;
            entries.push(GradcheckEntry {
                architecture: name.clone(),
                loss: loss.to_string(),
                params: errors.len(),
                max_rel_err: errors.iter().copied().fold(0.0, f64::max),
                mean_rel_err: mean(&errors),
            });
        }
    }
    Ok(GradcheckReport {
        seed,
        tolerance: GRADCHECK_TOLERANCE,
        entries,
    })
}
