//! Parameter update rules: SGD (plain, momentum, Nesterov) and Adam, with
//! gradient-coupled L2 decay on weight tensors, plus learning-rate schedules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamMut;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter {name}: shape {param:?}, gradient {grad:?}, buffer {buffer:?}")]
    ShapeMismatch {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
        buffer: Vec<usize>,
    },
    #[error("parameter count changed from {expected} to {actual}")]
    ParamCount { expected: usize, actual: usize },
    #[error("non-finite gradient in parameter {name} at index {index}")]
    NonFiniteGradient { name: String, index: usize },
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        nesterov: bool,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps_hat")]
        eps_hat: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_hat() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd {
            momentum: 0.0,
            nesterov: false,
        }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_hat: default_eps_hat(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::Sgd { momentum, nesterov } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(OptimError::InvalidConfig(format!("momentum {momentum} outside [0, 1)")));
                }
                if nesterov && momentum == 0.0 {
                    return Err(OptimError::InvalidConfig("nesterov needs momentum > 0".into()));
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps_hat } => {
                for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                    if !(b > 0.0 && b < 1.0) {
                        return Err(OptimError::InvalidConfig(format!("{name} {b} outside (0, 1)")));
                    }
                }
                if eps_hat.is_nan() || eps_hat <= 0.0 {
                    return Err(OptimError::InvalidConfig(format!("eps_hat {eps_hat} must be positive")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Buffers {
    Velocity(Tensor),
    Moments { first: Tensor, second: Tensor },
}

impl Buffers {
    fn shape(&self) -> &[usize] {
        match self {
            Buffers::Velocity(v) => v.shape(),
            Buffers::Moments { first, .. } => first.shape(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    step_count: u64,
    buffers: Vec<Buffers>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Result<Self> {
        kind.validate()?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(OptimError::InvalidConfig(format!("learning rate {lr} must be positive")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "weight decay {weight_decay} must be non-negative"
            )));
        }
        Ok(Self {
            kind,
            lr,
            weight_decay,
            step_count: 0,
            buffers: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn fresh_buffers(&self, shape: &[usize]) -> Buffers {
        match self.kind {
            OptimizerKind::Sgd { .. } => Buffers::Velocity(Tensor::zeros(shape)),
            OptimizerKind::Adam { .. } => Buffers::Moments {
                first: Tensor::zeros(shape),
                second: Tensor::zeros(shape),
            },
        }
    }

    /// Applies one update to every parameter in place. Nothing is modified
    /// when any shape or gradient check fails.
    pub fn apply_update(&mut self, params: &mut [ParamMut<'_>]) -> Result<()> {
        if self.buffers.is_empty() {
            self.buffers = params.iter().map(|p| self.fresh_buffers(p.value.shape())).collect();
        }
        if self.buffers.len() != params.len() {
            return Err(OptimError::ParamCount {
                expected: self.buffers.len(),
                actual: params.len(),
            });
        }
        for (p, buf) in params.iter().zip(&self.buffers) {
            if p.value.shape() != p.grad.shape() || p.value.shape() != buf.shape() {
                return Err(OptimError::ShapeMismatch {
                    name: p.name.clone(),
                    param: p.value.shape().to_vec(),
                    grad: p.grad.shape().to_vec(),
                    buffer: buf.shape().to_vec(),
                });
            }
            if let Some(index) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(OptimError::NonFiniteGradient {
                    name: p.name.clone(),
                    index,
                });
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = self.lr;
        for (p, buf) in params.iter_mut().zip(self.buffers.iter_mut()) {
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            let grad = p.grad.data();
            let value = p.value.data_mut();
            match (self.kind, buf) {
                (OptimizerKind::Sgd { momentum, nesterov }, Buffers::Velocity(v)) => {
                    let v = v.data_mut();
                    for i in 0..value.len() {
                        let g = grad[i] + decay * value[i];
                        v[i] = momentum * v[i] + g;
                        let step = if nesterov { g + momentum * v[i] } else { v[i] };
                        value[i] -= lr * step;
                    }
                }
                (OptimizerKind::Adam { beta1, beta2, eps_hat }, Buffers::Moments { first, second }) => {
                    let (m, s) = (first.data_mut(), second.data_mut());
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..value.len() {
                        let g = grad[i] + decay * value[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        s[i] = beta2 * s[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / c1;
                        let s_hat = s[i] / c2;
                        value[i] -= lr * m_hat / (s_hat.sqrt() + eps_hat);
                    }
                }
                _ => unreachable!("buffers are created to match the optimizer kind"),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply by `factor` every `every_n_epochs` epochs.
    StepDecay { factor: f64, every_n_epochs: usize },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if let LrSchedule::StepDecay { factor, every_n_epochs } = *self {
            if !(factor > 0.0 && factor <= 1.0) || every_n_epochs == 0 {
                return Err(OptimError::InvalidConfig(format!(
                    "step decay needs factor in (0, 1] and a positive period, got {factor} / {every_n_epochs}"
                )));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, base_lr: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base_lr,
            LrSchedule::StepDecay { factor, every_n_epochs } => {
                base_lr * factor.powi((epoch / every_n_epochs) as i32)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(state: &mut OptimizerState, value: &mut Tensor, grad: &Tensor, decay: bool) -> Result<()> {
        let mut params = vec![ParamMut {
            name: "w".into(),
            value,
            grad,
            decay,
        }];
        state.apply_update(&mut params)
    }

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v]).unwrap()
    }

    #[test]
    fn plain_sgd_step() {
        let mut s = OptimizerState::new(OptimizerKind::sgd(), 0.1, 0.0).unwrap();
        let mut w = scalar(1.0);
        step(&mut s, &mut w, &scalar(0.5), true).unwrap();
        assert!((w.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [1e-3, -2.0, 40.0] {
            let mut s = OptimizerState::new(OptimizerKind::adam(), 0.01, 0.0).unwrap();
            let mut w = scalar(0.0);
            step(&mut s, &mut w, &scalar(g), false).unwrap();
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert!((w.data()[0] - expect).abs() < 1e-15);
            assert!((w.data()[0].abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn weight_decay_is_added_to_gradient() {
        let mut s = OptimizerState::new(OptimizerKind::sgd(), 1.0, 1e-4).unwrap();
        let mut w = scalar(2.0);
        step(&mut s, &mut w, &scalar(0.5), true).unwrap();
        assert!((w.data()[0] - (2.0 - (0.5 + 1e-4 * 2.0))).abs() < 1e-15);
        // biases are exempt
        let mut s = OptimizerState::new(OptimizerKind::sgd(), 1.0, 1e-4).unwrap();
        let mut b = scalar(2.0);
        step(&mut s, &mut b, &scalar(0.5), false).unwrap();
        assert_eq!(b.data()[0], 1.5);
    }

    #[test]
    fn nesterov_step_matches_hand_computation() {
        let kind = OptimizerKind::Sgd {
            momentum: 0.9,
            nesterov: true,
        };
        let mut s = OptimizerState::new(kind, 0.1, 0.0).unwrap();
        let mut w = scalar(1.0);
        step(&mut s, &mut w, &scalar(1.0), false).unwrap();
        // v = 1, step = 1 + 0.9 = 1.9
        assert!((w.data()[0] - (1.0 - 0.19)).abs() < 1e-15);
        step(&mut s, &mut w, &scalar(1.0), false).unwrap();
        // v = 1.9, step = 1 + 0.9 * 1.9 = 2.71
        assert!((w.data()[0] - (0.81 - 0.271)).abs() < 1e-15);
    }

    #[test]
    fn errors_name_the_parameter() {
        let mut s = OptimizerState::new(OptimizerKind::adam(), 0.1, 0.0).unwrap();
        let mut w = scalar(1.0);
        let mut g = scalar(0.0);
        g.data_mut()[0] = f64::INFINITY;
        let err = step(&mut s, &mut w, &g, true).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient { name: "w".into(), index: 0 });
        assert_eq!(s.step_count(), 0);
        let err = step(&mut s, &mut w, &Tensor::zeros(&[2]), true).unwrap_err();
        assert!(matches!(err, OptimError::ShapeMismatch { ref name, .. } if name == "w"));
    }

    #[test]
    fn invalid_settings_rejected() {
        assert!(OptimizerState::new(OptimizerKind::sgd(), 0.0, 0.0).is_err());
        assert!(OptimizerState::new(OptimizerKind::sgd(), 0.1, -1.0).is_err());
        let kind = OptimizerKind::Sgd { momentum: 1.0, nesterov: false };
        assert!(OptimizerState::new(kind, 0.1, 0.0).is_err());
    }

    fn minimize_quadratic(kind: OptimizerKind, lr: f64) -> f64 {
        let mut s = OptimizerState::new(kind, lr, 0.0).unwrap();
        let mut w = scalar(0.0);
        for _ in 0..500 {
            let g = scalar(2.0 * (w.data()[0] - 3.0));
            step(&mut s, &mut w, &g, true).unwrap();
        }
        w.data()[0]
    }

    #[test]
    fn quadratic_converges() {
        assert!((minimize_quadratic(OptimizerKind::sgd(), 0.1) - 3.0).abs() < 1e-4);
        assert!((minimize_quadratic(OptimizerKind::adam(), 0.1) - 3.0).abs() < 1e-4);
        let nesterov = OptimizerKind::Sgd { momentum: 0.9, nesterov: true };
        assert!((minimize_quadratic(nesterov, 0.01) - 3.0).abs() < 1e-4);
    }

    #[test]
    fn schedules() {
        assert_eq!(LrSchedule::Constant.lr_at(1e-3, 50), 1e-3);
        let s = LrSchedule::StepDecay { factor: 0.5, every_n_epochs: 10 };
        assert!((s.lr_at(4e-4, 25) - 1e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(2e-4, 0), 2e-4);
        let mut prev = f64::INFINITY;
        for e in 0..40 {
            let lr = s.lr_at(4e-4, e);
            assert!(lr > 0.0 && lr <= prev);
            prev = lr;
        }
        assert!(LrSchedule::StepDecay { factor: 0.5, every_n_epochs: 0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn zero_momentum_is_plain_sgd(values in proptest::collection::vec(-5.0f64..5.0, 1..8), seed in 0u64..1000) {
            let mut rng = crate::rng::Rng::new(seed);
            let n = values.len();
            let mut a = Tensor::from_vec(values.clone()).unwrap();
            let mut b = Tensor::from_vec(values).unwrap();
            let mut plain = OptimizerState::new(OptimizerKind::sgd(), 0.05, 1e-4).unwrap();
            let mut with_m = OptimizerState::new(OptimizerKind::Sgd { momentum: 0.0, nesterov: false }, 0.05, 1e-4).unwrap();
            for _ in 0..5 {
                let g = Tensor::from_vec((0..n).map(|_| rng.normal()).collect()).unwrap();
                step(&mut plain, &mut a, &g, true).unwrap();
                step(&mut with_m, &mut b, &g, true).unwrap();
            }
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn zero_gradients_leave_params_unchanged(values in proptest::collection::vec(-5.0f64..5.0, 1..8), steps in 1usize..20) {
            let kinds = [
                OptimizerKind::sgd(),
                OptimizerKind::Sgd { momentum: 0.9, nesterov: false },
                OptimizerKind::Sgd { momentum: 0.9, nesterov: true },
                OptimizerKind::adam(),
            ];
            for kind in kinds {
                let mut s = OptimizerState::new(kind, 0.1, 0.0).unwrap();
                let mut w = Tensor::from_vec(values.clone()).unwrap();
                let zero = Tensor::zeros(&[values.len()]);
                for _ in 0..steps {
                    step(&mut s, &mut w, &zero, true).unwrap();
                }
                prop_assert_eq!(w.data(), values.as_slice());
                prop_assert_eq!(s.step_count(), steps as u64);
            }
        }
    }
}
