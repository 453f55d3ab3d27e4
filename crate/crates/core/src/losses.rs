//! Loss functions over predicted class probabilities.
//!
//! Adma is `L(p, y) = sum_j y_j * (e - e^(p_j^a))` for a scaling factor `a > 0`.
//! With a one-hot label it reduces to `e - e^(p_true^a)`, which is bounded in
//! `[0, e - 1]`. Its derivative with respect to `p_j` is
//! `-y_j * a * p_j^(a-1) * e^(p_j^a)`; the `p^(a-1)` factor diverges at zero for
//! `a < 1`, so gradients clamp `p` to `[epsilon, 1]` while values only clamp to
//! `[0, 1]`.
//!
//! The baselines are categorical cross-entropy, mean squared error, and a
//! squared hinge adapted to probability outputs: labels are remapped to
//! `2y - 1` and predictions to `2p - 1` before the hinge.
//!
//! Besides value and gradient, this module hosts the analysis routines for the
//! loss curve: uniform-grid sweeps, a finite-difference convexity probe, and
//! the gradient-magnitude (implicit weighting) profile.

use std::f64::consts::E;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_EPSILON: f64 = 1e-7;

/// Upper end of the scaling-factor range where Adma stays convex in `p`.
pub const RECOMMENDED_MAX_A: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {predictions} predictions vs {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("non-finite {what} {value} at index {index}")]
    NonFinite {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("negative label {value} at index {index}")]
    NegativeLabel { index: usize, value: f64 },
    #[error("scaling factor must lie in (0, 1], got {0}")]
    InvalidScalingFactor(f64),
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid too coarse: {0} points, need at least {min}", min = MIN_PROBE_POINTS)]
    GridTooCoarse(usize),
    #[error("no loss functions given")]
    EmptyKinds,
    #[error("unknown loss `{0}`")]
    UnknownLoss(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Adma's scaling factor. Values above 0.5 are accepted for analysis and
/// sweeps but reported through [`AdmaParams::exceeds_recommended`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AdmaParams {
    a: f64,
}

impl AdmaParams {
    pub fn new(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0 && a <= 1.0) {
            return Err(LossError::InvalidScalingFactor(a));
        }
        Ok(Self { a })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn exceeds_recommended(&self) -> bool {
        self.a > RECOMMENDED_MAX_A
    }
}

impl TryFrom<f64> for AdmaParams {
    type Error = LossError;
    fn try_from(a: f64) -> Result<Self> {
        Self::new(a)
    }
}

impl From<AdmaParams> for f64 {
    fn from(p: AdmaParams) -> f64 {
        p.a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Cce,
    Mse,
    SquaredHinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Adma { a: AdmaParams },
    Cce,
    Mse,
    SquaredHinge,
}

impl From<Baseline> for LossKind {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::Cce => LossKind::Cce,
            Baseline::Mse => LossKind::Mse,
            Baseline::SquaredHinge => LossKind::SquaredHinge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFunction {
    pub kind: LossKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl fmt::Display for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LossKind::Adma { a } => write!(f, "adma({})", a.a()),
            LossKind::Cce => f.write_str("cce"),
            LossKind::Mse => f.write_str("mse"),
            LossKind::SquaredHinge => f.write_str("squared_hinge"),
        }
    }
}

impl std::str::FromStr for LossFunction {
    type Err = LossError;

    /// Parses `cce`, `mse`, `squared_hinge`, `adma(0.26)` or `adma:0.26`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "cce" | "cross_entropy" => return Ok(Self::cce()),
            "mse" => return Ok(Self::mse()),
            "squared_hinge" | "hinge2" => return Ok(Self::squared_hinge()),
            _ => {}
        }
        let a_text = s
            .strip_prefix("adma(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("adma:"));
        match a_text.map(str::parse::<f64>) {
            Some(Ok(a)) => Self::adma(a),
            _ => Err(LossError::UnknownLoss(s)),
        }
    }
}

impl LossFunction {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn adma(a: f64) -> Result<Self> {
        Ok(Self::new(LossKind::Adma {
            a: AdmaParams::new(a)?,
        }))
    }

    pub fn cce() -> Self {
        Self::new(LossKind::Cce)
    }

    pub fn mse() -> Self {
        Self::new(LossKind::Mse)
    }

    pub fn squared_hinge() -> Self {
        Self::new(LossKind::SquaredHinge)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(LossError::InvalidEpsilon(epsilon));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn value(&self, p: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.value_and_grad(p, y)?.0)
    }

    pub fn grad(&self, p: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(p, y)?.1)
    }

    pub fn value_and_grad(&self, p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        validate(p, y)?;
        let mut grad = vec![0.0; p.len()];
        let value = self.accumulate(p, y, &mut grad, 1.0);
        Ok((value, grad))
    }

    /// Value at a scalar true-class probability (single-component one-hot label).
    pub fn scalar_value(&self, p: f64) -> Result<f64> {
        self.value(&[p], &[1.0])
    }

    /// Mean loss over a batch of prediction rows, plus the gradient of that
    /// mean with respect to every prediction.
    pub fn batch_value_and_grad(&self, predictions: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
        if predictions.shape() != labels.shape() || predictions.rank() != 2 {
            return Err(LossError::Tensor(TensorError::ShapeMismatch {
                op: "loss",
                left: predictions.shape().to_vec(),
                right: labels.shape().to_vec(),
            }));
        }
        validate(predictions.data(), labels.data())?;
        let n = predictions.rows();
        let c = predictions.row_len();
        let mut grad = vec![0.0; predictions.len()];
        let mut total = 0.0;
        let scale = 1.0 / n as f64;
        for r in 0..n {
            let span = r * c..(r + 1) * c;
            total += self.accumulate(
                &predictions.data()[span.clone()],
                &labels.data()[span.clone()],
                &mut grad[span],
                scale,
            );
        }
        let grad = Tensor::new(predictions.shape().to_vec(), grad)?;
        Ok((total * scale, grad))
    }

    /// Per-sample value; adds `grad_scale * dL/dp` into `grad`. Inputs are
    /// already validated.
    fn accumulate(&self, p: &[f64], y: &[f64], grad: &mut [f64], grad_scale: f64) -> f64 {
        let eps = self.epsilon;
        let c = p.len() as f64;
        let mut value = 0.0;
        match self.kind {
            LossKind::Adma { a } => {
                let a = a.a();
                for j in 0..p.len() {
                    if y[j] == 0.0 {
                        continue;
                    }
                    value += y[j] * (E - p[j].clamp(0.0, 1.0).powf(a).exp());
                    let pc = p[j].clamp(eps, 1.0);
                    let pa = pc.powf(a);
                    grad[j] -= grad_scale * y[j] * a * (pa / pc) * pa.exp();
                }
            }
            LossKind::Cce => {
                for j in 0..p.len() {
                    if y[j] == 0.0 {
                        continue;
                    }
                    let pc = p[j].clamp(eps, 1.0);
                    value -= y[j] * pc.ln();
                    grad[j] -= grad_scale * y[j] / pc;
                }
            }
            LossKind::Mse => {
                for j in 0..p.len() {
                    let d = p[j] - y[j];
                    value += d * d / c;
                    grad[j] += grad_scale * 2.0 * d / c;
                }
            }
            LossKind::SquaredHinge => {
                for j in 0..p.len() {
                    let y_pm = 2.0 * y[j] - 1.0;
                    let margin = (1.0 - y_pm * (2.0 * p[j] - 1.0)).max(0.0);
                    value += margin * margin / c;
                    grad[j] -= grad_scale * 4.0 * y_pm * margin / c;
                }
            }
        }
        // -0.0 and tiny negative round-off at p == 1
        value.max(0.0)
    }
}

fn validate(p: &[f64], y: &[f64]) -> Result<()> {
    if p.len() != y.len() {
        return Err(LossError::LengthMismatch {
            predictions: p.len(),
            labels: y.len(),
        });
    }
    for (index, (&pv, &yv)) in p.iter().zip(y).enumerate() {
        if !pv.is_finite() {
            return Err(LossError::NonFinite {
                what: "prediction",
                index,
                value: pv,
            });
        }
        if !yv.is_finite() {
            return Err(LossError::NonFinite {
                what: "label",
                index,
                value: yv,
            });
        }
        if yv < 0.0 {
            return Err(LossError::NegativeLabel { index, value: yv });
        }
    }
    Ok(())
}

/// `sum_j y_j * (e - e^(p_j^a))`.
pub fn adma_value(p: &[f64], y: &[f64], a: f64) -> Result<f64> {
    LossFunction::adma(a)?.value(p, y)
}

/// `-y_j * a * p_j^(a-1) * e^(p_j^a)` with `p` clamped to `[1e-7, 1]`.
pub fn adma_grad_wrt_p(p: &[f64], y: &[f64], a: f64) -> Result<Vec<f64>> {
    LossFunction::adma(a)?.grad(p, y)
}

pub fn baseline_value_and_grad(kind: Baseline, p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    LossFunction::new(kind.into()).value_and_grad(p, y)
}

/// The `e^(p^a)` factor of Adma's gradient.
pub fn amplification_factor(p: f64, a: f64) -> f64 {
    p.clamp(0.0, 1.0).powf(a).exp()
}

/// Uniform grid of probabilities, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityGrid {
    pub p_min: f64,
    pub p_max: f64,
    pub n_points: usize,
}

impl ProbabilityGrid {
    pub fn new(p_min: f64, p_max: f64, n_points: usize) -> Result<Self> {
        let grid = Self {
            p_min,
            p_max,
            n_points,
        };
        grid.validate(0.0, 1.0)?;
        Ok(grid)
    }

    fn validate(&self, lo: f64, hi: f64) -> Result<()> {
        if !(self.p_min.is_finite() && self.p_max.is_finite()) {
            return Err(LossError::InvalidGrid("non-finite bounds".into()));
        }
        if self.p_min < lo || self.p_max > hi || self.p_min >= self.p_max {
            return Err(LossError::InvalidGrid(format!(
                "need {lo} <= p_min < p_max <= {hi}, got [{}, {}]",
                self.p_min, self.p_max
            )));
        }
        if self.n_points < 2 {
            return Err(LossError::InvalidGrid(format!(
                "need at least 2 points, got {}",
                self.n_points
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.p_max - self.p_min) / (self.n_points - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.n_points)
            .map(|i| {
                if i + 1 == self.n_points {
                    self.p_max
                } else {
                    self.p_min + step * i as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSample {
    pub p: f64,
    /// One value per requested loss, in request order.
    pub values: Vec<f64>,
}

/// Evaluates every loss at each grid probability, treating `p` as the
/// true-class probability.
pub fn curve_sweep(kinds: &[LossFunction], grid: &ProbabilityGrid) -> Result<Vec<CurveSample>> {
    if kinds.is_empty() {
        return Err(LossError::EmptyKinds);
    }
    grid.validate(0.0, 1.0)?;
    grid.points()
        .into_iter()
        .map(|p| {
            let values = kinds
                .iter()
                .map(|k| k.scalar_value(p))
                .collect::<Result<Vec<_>>>()?;
            Ok(CurveSample { p, values })
        })
        .collect()
}

/// Max absolute deviation of each Adma curve from cross-entropy after both are
/// rescaled to 1 at the grid floor, returned per `a` in input order.
pub fn cce_shape_deviation(a_values: &[f64], grid: &ProbabilityGrid, epsilon: f64) -> Result<Vec<(f64, f64)>> {
    grid.validate(0.0, 1.0)?;
    let cce = LossFunction::cce().with_epsilon(epsilon)?;
    let points = grid.points();
    let cce_curve = points
        .iter()
        .map(|&p| cce.scalar_value(p))
        .collect::<Result<Vec<_>>>()?;
    let cce_top = cce_curve[0];
    a_values
        .iter()
        .map(|&a| {
            let adma = LossFunction::adma(a)?.with_epsilon(epsilon)?;
            let curve = points
                .iter()
                .map(|&p| adma.scalar_value(p))
                .collect::<Result<Vec<_>>>()?;
            let top = curve[0];
            let dev = curve
                .iter()
                .zip(&cce_curve)
                .map(|(v, c)| (v / top - c / cce_top).abs())
                .fold(0.0, f64::max);
            Ok((a, dev))
        })
        .collect()
}

/// The `a` with the smallest deviation from cross-entropy's shape; lowest `a` on ties.
pub fn best_cce_emulation(a_values: &[f64], grid: &ProbabilityGrid, epsilon: f64) -> Result<(f64, f64)> {
    let devs = cce_shape_deviation(a_values, grid, epsilon)?;
    let mut best: Option<(f64, f64)> = None;
    for (a, d) in devs {
        best = match best {
            Some((ba, bd)) if bd < d || (bd == d && ba <= a) => Some((ba, bd)),
            _ => Some((a, d)),
        };
    }
    best.ok_or(LossError::EmptyKinds)
}

pub const MIN_PROBE_POINTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub a: f64,
    pub is_convex: bool,
    pub first_violation: Option<f64>,
    /// Most negative second-difference estimate seen (0 if none negative).
    pub min_curvature: f64,
}

/// Checks convexity of `p -> e - e^(p^a)` with central second differences at
/// the interior grid points. An estimate counts as a violation when it falls
/// below `-1e-9` times the largest estimate magnitude.
pub fn convexity_probe(a: f64, grid: &ProbabilityGrid) -> Result<ConvexityReport> {
    if !(a.is_finite() && a > 0.0) {
        return Err(LossError::InvalidScalingFactor(a));
    }
    grid.validate(0.01, 1.0)?;
    if grid.n_points < MIN_PROBE_POINTS {
        return Err(LossError::GridTooCoarse(grid.n_points));
    }
    let points = grid.points();
    let f = |p: f64| E - p.powf(a).exp();
    let values: Vec<f64> = points.iter().map(|&p| f(p)).collect();
    let estimates: Vec<(f64, f64)> = (1..points.len() - 1)
        .map(|i| {
            let h_left = points[i] - points[i - 1];
            let h_right = points[i + 1] - points[i];
            // non-uniform three-point formula; reduces to the usual one when h_left == h_right
            let d2 = 2.0
                * (h_left * values[i + 1] - (h_left + h_right) * values[i] + h_right * values[i - 1])
                / (h_left * h_right * (h_left + h_right));
            (points[i], d2)
        })
        .collect();
    let scale = estimates.iter().fold(0.0f64, |s, &(_, d)| s.max(d.abs()));
    let tolerance = 1e-9 * scale.max(1.0);
    let first_violation = estimates
        .iter()
        .find(|&&(_, d)| d < -tolerance)
        .map(|&(p, _)| p);
    let min_curvature = estimates.iter().fold(0.0f64, |m, &(_, d)| m.min(d));
    Ok(ConvexityReport {
        a,
        is_convex: first_violation.is_none(),
        first_violation,
        min_curvature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightingPoint {
    pub p: f64,
    /// `|dL/dp| = a * p^(a-1) * e^(p^a)`
    pub magnitude: f64,
    /// `e^(p^a)`
    pub amplification: f64,
}

pub fn weighting_profile(a: f64, grid: &ProbabilityGrid) -> Result<Vec<WeightingPoint>> {
    let params = AdmaParams::new(a)?;
    grid.validate(DEFAULT_EPSILON, 1.0)?;
    let loss = LossFunction::new(LossKind::Adma { a: params });
    grid.points()
        .into_iter()
        .map(|p| {
            let g = loss.grad(&[p], &[1.0])?[0];
            Ok(WeightingPoint {
                p,
                magnitude: g.abs(),
                amplification: amplification_factor(p, a),
            })
        })
        .collect()
}
