use std::fs::File;
use std::io::{BufReader, BufWriter};

use adma::harness::{self, TrainConfig};
use adma::losses::{self, LossFunction, ProbabilityGrid};
use adma::nn::checkpoint::{read_checkpoint, write_checkpoint};
use adma::nn::{build_convnet, build_mlp, Activation, ConvNetSpec, MlpSpec};
use adma::Tensor;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn grid(p_min: f64, p_max: f64, n_points: usize) -> PyResult<ProbabilityGrid> {
    ProbabilityGrid::new(p_min, p_max, n_points).map_err(err)
}

/// Adma loss `sum_j y_j (e - e^(p_j^a))` for one sample.
#[pyfunction]
fn adma_value(p: Vec<f64>, y: Vec<f64>, a: f64) -> PyResult<f64> {
    losses::adma_value(&p, &y, a).map_err(err)
}

/// Gradient of the Adma loss with respect to `p`.
#[pyfunction]
fn adma_grad(p: Vec<f64>, y: Vec<f64>, a: f64) -> PyResult<Vec<f64>> {
    losses::adma_grad_wrt_p(&p, &y, a).map_err(err)
}

/// `e^(p^a)`, the factor multiplying Adma's gradient.
#[pyfunction]
fn amplification_factor(p: f64, a: f64) -> f64 {
    losses::amplification_factor(p, a)
}

/// Value and gradient of any loss by name (`cce`, `mse`, `squared_hinge`, `adma(0.26)`).
#[pyfunction]
fn loss_value_and_grad(loss: &str, p: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    let loss: LossFunction = loss.parse().map_err(err)?;
    loss.value_and_grad(&p, &y).map_err(err)
}

/// Rows of `(p, [value per loss])` with `p` as the true-class probability.
#[pyfunction]
#[pyo3(signature = (losses, p_min=1e-7, p_max=1.0, n_points=101))]
fn curve_sweep(losses: Vec<String>, p_min: f64, p_max: f64, n_points: usize) -> PyResult<Vec<(f64, Vec<f64>)>> {
    let kinds = losses
        .iter()
        .map(|s| s.parse::<LossFunction>().map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let samples = losses::curve_sweep(&kinds, &grid(p_min, p_max, n_points)?).map_err(err)?;
    Ok(samples.into_iter().map(|s| (s.p, s.values)).collect())
}

/// `(a, deviation)` for the Adma curve closest in shape to cross-entropy.
#[pyfunction]
#[pyo3(signature = (a_values, p_min=1e-7, p_max=1.0, n_points=1001, epsilon=1e-7))]
fn best_cce_emulation(a_values: Vec<f64>, p_min: f64, p_max: f64, n_points: usize, epsilon: f64) -> PyResult<(f64, f64)> {
    losses::best_cce_emulation(&a_values, &grid(p_min, p_max, n_points)?, epsilon).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, p_min=0.01, p_max=1.0, n_points=1024))]
fn convexity_probe<'py>(py: Python<'py>, a: f64, p_min: f64, p_max: f64, n_points: usize) -> PyResult<Bound<'py, PyDict>> {
    let r = losses::convexity_probe(a, &grid(p_min, p_max, n_points)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("a", r.a)?;
    d.set_item("is_convex", r.is_convex)?;
    d.set_item("first_violation", r.first_violation)?;
    d.set_item("min_curvature", r.min_curvature)?;
    Ok(d)
}

/// Rows of `(p, |dL/dp|, e^(p^a))`.
#[pyfunction]
#[pyo3(signature = (a, p_min=0.01, p_max=1.0, n_points=100))]
fn weighting_profile(a: f64, p_min: f64, p_max: f64, n_points: usize) -> PyResult<Vec<(f64, f64, f64)>> {
    let rows = losses::weighting_profile(a, &grid(p_min, p_max, n_points)?).map_err(err)?;
    Ok(rows.into_iter().map(|w| (w.p, w.magnitude, w.amplification)).collect())
}

/// Runs a training configuration given as JSON or TOML text and returns the
/// run report as JSON text.
#[pyfunction]
fn train(config: &str) -> PyResult<String> {
    let config: TrainConfig = match serde_json::from_str(config) {
        Ok(c) => c,
        Err(_) => TrainConfig::from_toml(config).map_err(err)?,
    };
    config.validate().map_err(err)?;
    let report = harness::train(&config).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

/// The blobs default configuration as TOML text, a starting point for [`train`].
#[pyfunction]
fn default_config() -> PyResult<String> {
    TrainConfig::blobs_default().to_toml().map_err(err)
}

/// `(max relative error, passed)` of the built-in gradient check.
#[pyfunction]
#[pyo3(signature = (seed=0, batch=4))]
fn gradcheck(seed: u64, batch: usize) -> PyResult<(f64, bool)> {
    let report = harness::gradcheck(seed, batch).map_err(err)?;
    Ok((report.max_rel_err(), report.passed()))
}

/// A loss function parsed from its name.
#[pyclass(name = "Loss", frozen)]
struct PyLoss {
    inner: LossFunction,
}

#[pymethods]
impl PyLoss {
    #[new]
    #[pyo3(signature = (name, epsilon=1e-7))]
    fn new(name: &str, epsilon: f64) -> PyResult<Self> {
        let inner = name.parse::<LossFunction>().map_err(err)?.with_epsilon(epsilon).map_err(err)?;
        Ok(Self { inner })
    }

    fn value(&self, p: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.inner.value(&p, &y).map_err(err)
    }

    fn grad(&self, p: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad(&p, &y).map_err(err)
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    fn __repr__(&self) -> String {
        format!("Loss('{}')", self.inner)
    }
}

/// A network with a softmax head.
#[pyclass(name = "Model")]
struct PyModel {
    inner: adma::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (in_dim, hidden, classes, activation="elu", dropout=0.0, seed=0))]
    fn mlp(in_dim: usize, hidden: Vec<usize>, classes: usize, activation: &str, dropout: f64, seed: u64) -> PyResult<Self> {
        let spec = MlpSpec {
            in_dim,
            hidden,
            classes,
            activation: activation.parse::<Activation>().map_err(err)?,
            dropout,
        };
        Ok(Self {
            inner: build_mlp(&spec, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (channels, height, width, base_channels, classes, seed=0))]
    fn convnet(channels: usize, height: usize, width: usize, base_channels: usize, classes: usize, seed: u64) -> PyResult<Self> {
        let spec = ConvNetSpec::new(channels, height, width, base_channels, classes);
        Ok(Self {
            inner: build_convnet(&spec, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Ok(Self {
            inner: read_checkpoint(BufReader::new(file)).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        write_checkpoint(&self.inner, BufWriter::new(file)).map_err(err)
    }

    /// Class probabilities for a batch of flattened samples.
    fn predict(&self, batch: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = Tensor::from_rows(&batch).map_err(err)?;
        let p = self.inner.predict(&x).map_err(err)?;
        Ok((0..p.rows()).map(|r| p.row(r).to_vec()).collect())
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn __repr__(&self) -> String {
        let kinds: Vec<&str> = self.inner.layers().iter().map(|l| l.kind_name()).collect();
        format!("Model([{}], params={})", kinds.join(", "), self.inner.param_count())
    }
}

#[pymodule]
fn adma_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("E_MINUS_ONE", std::f64::consts::E - 1.0)?;
    m.add("DEFAULT_EPSILON", losses::DEFAULT_EPSILON)?;
    m.add_function(wrap_pyfunction!(adma_value, m)?)?;
    m.add_function(wrap_pyfunction!(adma_grad, m)?)?;
    m.add_function(wrap_pyfunction!(amplification_factor, m)?)?;
    m.add_function(wrap_pyfunction!(loss_value_and_grad, m)?)?;
    m.add_function(wrap_pyfunction!(curve_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(best_cce_emulation, m)?)?;
    m.add_function(wrap_pyfunction!(convexity_probe, m)?)?;
    m.add_function(wrap_pyfunction!(weighting_profile, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_class::<PyLoss>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
