//! Layer kernels. Each layer's forward returns its output together with the
//! cache its backward pass needs; the [`Model`](super::Model) owns the caches.

use serde::{Deserialize, Serialize};

use super::{NnError, ParamMut, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Elu { alpha: f64 },
    LeakyRelu { alpha: f64 },
}

impl Activation {
    pub fn elu() -> Self {
        Activation::Elu { alpha: 1.0 }
    }

    fn op(self) -> UnaryOp {
        match self {
            Activation::Relu => UnaryOp::Relu,
            Activation::Elu { alpha } => UnaryOp::Elu(alpha),
            Activation::LeakyRelu { alpha } => UnaryOp::LeakyRelu(alpha),
        }
    }

    /// Derivative given the pre-activation input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    y + alpha
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = NnError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::elu()),
            "leaky_relu" => Ok(Activation::LeakyRelu { alpha: 0.01 }),
            other => Err(NnError::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub weight_grad: Tensor,
    pub bias_grad: Tensor,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
            weight_grad: Tensor::zeros(&[inputs, outputs]),
            bias_grad: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// 2-D convolution with valid padding over `(channels, height, width)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `(out_channels, in_channels * kernel * kernel)`
    pub weight: Tensor,
    pub bias: Tensor,
    pub weight_grad: Tensor,
    pub bias_grad: Tensor,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        let wshape = [out_channels, in_channels * kernel * kernel];
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Tensor::zeros(&wshape),
            bias: Tensor::zeros(&[out_channels]),
            weight_grad: Tensor::zeros(&wshape),
            bias_grad: Tensor::zeros(&[out_channels]),
        }
    }

    fn out_extent(&self, extent: usize) -> Option<usize> {
        (extent >= self.kernel).then(|| (extent - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool { size: usize },
    Flatten,
    Dropout { rate: f64 },
    Activation(Activation),
    Softmax,
}

/// Whatever a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    /// Input flattened to `(n, features)`.
    Dense(Tensor),
    Conv {
        input_shape: Vec<usize>,
        /// Per-sample im2col buffers, each `(in_ch*k*k, oh*ow)` row-major.
        columns: Vec<Vec<f64>>,
        out_hw: (usize, usize),
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Shape(Vec<usize>),
    Dropout(Option<Vec<f64>>),
    Activation { input: Tensor, output: Tensor },
    Softmax(Tensor),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Dropout { .. } => "dropout",
            Layer::Activation(_) => "activation",
            Layer::Softmax => "softmax",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape, or `None` when
    /// the input does not fit this layer.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                let features: usize = input.iter().product();
                (features == d.inputs()).then(|| vec![d.outputs()])
            }
            Layer::Conv2d(c) => {
                if input.len() != 3 || input[0] != c.in_channels {
                    return None;
                }
                Some(vec![
                    c.out_channels,
                    c.out_extent(input[1])?,
                    c.out_extent(input[2])?,
                ])
            }
            Layer::MaxPool { size } => {
                if input.len() != 3 || input[1] < *size || input[2] < *size {
                    return None;
                }
                Some(vec![input[0], input[1] / size, input[2] / size])
            }
            Layer::Flatten => Some(vec![input.iter().product()]),
            Layer::Dropout { .. } | Layer::Activation(_) | Layer::Softmax => {
                if matches!(self, Layer::Softmax) && input.len() != 1 {
                    return None;
                }
                Some(input.to_vec())
            }
        }
    }

    /// `rng` is only consulted by dropout in training mode.
    pub fn forward(&self, x: &Tensor, train: bool, rng: Option<&mut Rng>) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Dense(d) => dense_forward(d, x),
            Layer::Conv2d(c) => conv_forward(c, x),
            Layer::MaxPool { size } => maxpool_forward(*size, x),
            Layer::Flatten => {
                let n = x.rows();
                let out = x.reshape(&[n, x.row_len()])?;
                Ok((out, Cache::Shape(x.shape().to_vec())))
            }
            Layer::Dropout { rate } => dropout_forward(*rate, x, train, rng),
            Layer::Activation(act) => {
                let out = x.map_unary(act.op())?;
                Ok((
                    out.clone(),
                    Cache::Activation {
                        input: x.clone(),
                        output: out,
                    },
                ))
            }
            Layer::Softmax => {
                let out = softmax_rows(x)?;
                Ok((out.clone(), Cache::Softmax(out)))
            }
        }
    }

    /// Stores parameter gradients (overwriting) and returns the gradient with
    /// respect to the layer input when `need_input_grad` is set.
    pub fn backward(&mut self, cache: &Cache, grad: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense(input)) => dense_backward(d, input, grad, need_input_grad),
            (Layer::Conv2d(c), Cache::Conv { input_shape, columns, out_hw }) => {
                conv_backward(c, input_shape, columns, *out_hw, grad, need_input_grad)
            }
            (Layer::MaxPool { .. }, Cache::MaxPool { input_shape, argmax }) => {
                let mut out = vec![0.0; input_shape.iter().product()];
                for (g, &src) in grad.data().iter().zip(argmax) {
                    out[src] += g;
                }
                Ok(Some(Tensor::new(input_shape.clone(), out)?))
            }
            (Layer::Flatten, Cache::Shape(shape)) => Ok(Some(grad.reshape(shape)?)),
            (Layer::Dropout { .. }, Cache::Dropout(mask)) => Ok(Some(match mask {
                Some(m) => {
                    let data = grad.data().iter().zip(m).map(|(g, m)| g * m).collect();
                    Tensor::new(grad.shape().to_vec(), data)?
                }
                None => grad.clone(),
            })),
            (Layer::Activation(act), Cache::Activation { input, output }) => {
                let act = *act;
                let data = grad
                    .data()
                    .iter()
                    .zip(input.data().iter().zip(output.data()))
                    .map(|(g, (&x, &y))| g * act.derivative(x, y))
                    .collect();
                Ok(Some(Tensor::new(grad.shape().to_vec(), data)?))
            }
            (Layer::Softmax, Cache::Softmax(s)) => Ok(Some(softmax_backward(s, grad)?)),
            (layer, _) => Err(NnError::InvalidConfig(format!(
                "cache does not belong to a {} layer",
                layer.kind_name()
            ))),
        }
    }

    pub fn params_mut(&mut self, index: usize) -> Vec<ParamMut<'_>> {
        match self {
            Layer::Dense(d) => vec![
                ParamMut {
                    name: format!("{index}.dense.weight"),
                    value: &mut d.weight,
                    grad: &d.weight_grad,
                    decay: true,
                },
                ParamMut {
                    name: format!("{index}.dense.bias"),
                    value: &mut d.bias,
                    grad: &d.bias_grad,
                    decay: false,
                },
            ],
            Layer::Conv2d(c) => vec![
                ParamMut {
                    name: format!("{index}.conv2d.weight"),
                    value: &mut c.weight,
                    grad: &c.weight_grad,
                    decay: true,
                },
                ParamMut {
                    name: format!("{index}.conv2d.bias"),
                    value: &mut c.bias,
                    grad: &c.bias_grad,
                    decay: false,
                },
            ],
            _ => Vec::new(),
        }
    }

    /// `(value, grad)` pairs in the same order as [`Layer::params_mut`].
    pub fn params(&self) -> Vec<(&Tensor, &Tensor)> {
        match self {
            Layer::Dense(d) => vec![(&d.weight, &d.weight_grad), (&d.bias, &d.bias_grad)],
            Layer::Conv2d(c) => vec![(&c.weight, &c.weight_grad), (&c.bias, &c.bias_grad)],
            _ => Vec::new(),
        }
    }

    pub(crate) fn values_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }
}

fn dense_forward(d: &Dense, x: &Tensor) -> Result<(Tensor, Cache)> {
    let n = x.rows();
    let input = x.reshape(&[n, x.row_len()])?;
    let (k, m) = (d.inputs(), d.outputs());
    let mut out = vec![0.0; n * m];
    for row in out.chunks_mut(m) {
        row.copy_from_slice(d.bias.data());
    }
    gemm(n, k, m, input.data(), d.weight.data(), &mut out);
    Ok((Tensor::new(vec![n, m], out)?, Cache::Dense(input)))
}

fn dense_backward(d: &mut Dense, input: &Tensor, grad: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
    let n = input.rows();
    let (k, m) = (d.inputs(), d.outputs());
    let mut wg = vec![0.0; k * m];
    gemm_tn(k, n, m, input.data(), grad.data(), &mut wg);
    let mut bg = vec![0.0; m];
    for row in grad.data().chunks(m) {
        for (b, g) in bg.iter_mut().zip(row) {
            *b += g;
        }
    }
    d.weight_grad = Tensor::new(vec![k, m], wg)?;
    d.bias_grad = Tensor::new(vec![m], bg)?;
    if !need_input_grad {
        return Ok(None);
    }
    let mut dx = vec![0.0; n * k];
    gemm_nt(n, m, k, grad.data(), d.weight.data(), &mut dx);
    Ok(Some(Tensor::new(vec![n, k], dx)?))
}

fn conv_forward(c: &Conv2d, x: &Tensor) -> Result<(Tensor, Cache)> {
    let shape = x.shape();
    let (n, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (k, s) = (c.kernel, c.stride);
    let oh = (h - k) / s + 1;
    let ow = (w - k) / s + 1;
    let rows = ch * k * k;
    let cols = oh * ow;
    let mut out = vec![0.0; n * c.out_channels * cols];
    let mut columns = Vec::with_capacity(n);
    for (sample, out_sample) in out.chunks_mut(c.out_channels * cols).enumerate() {
        let img = &x.data()[sample * ch * h * w..(sample + 1) * ch * h * w];
        let mut col = vec![0.0; rows * cols];
        for ci in 0..ch {
            for ki in 0..k {
                for kj in 0..k {
                    let r = (ci * k + ki) * k + kj;
                    let dst = &mut col[r * cols..(r + 1) * cols];
                    for oi in 0..oh {
                        let src_row = ci * h * w + (oi * s + ki) * w + kj;
                        for oj in 0..ow {
                            dst[oi * ow + oj] = img[src_row + oj * s];
                        }
                    }
                }
            }
        }
        for (o, row) in out_sample.chunks_mut(cols).enumerate() {
            row.fill(c.bias.data()[o]);
        }
        gemm(c.out_channels, rows, cols, c.weight.data(), &col, out_sample);
        columns.push(col);
    }
    let out = Tensor::new(vec![n, c.out_channels, oh, ow], out)?;
    Ok((
        out,
        Cache::Conv {
            input_shape: shape.to_vec(),
            columns,
            out_hw: (oh, ow),
        },
    ))
}

fn conv_backward(
    c: &mut Conv2d,
    input_shape: &[usize],
    columns: &[Vec<f64>],
    (oh, ow): (usize, usize),
    grad: &Tensor,
    need_input_grad: bool,
) -> Result<Option<Tensor>> {
    let (n, ch, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (k, s) = (c.kernel, c.stride);
    let rows = ch * k * k;
    let cols = oh * ow;
    let oc = c.out_channels;
    let mut wg = vec![0.0; oc * rows];
    let mut bg = vec![0.0; oc];
    let mut dx = need_input_grad.then(|| vec![0.0; n * ch * h * w]);
    let mut dcol = vec![0.0; rows * cols];
    for (sample, col) in columns.iter().enumerate() {
        let g = &grad.data()[sample * oc * cols..(sample + 1) * oc * cols];
        gemm_nt(oc, cols, rows, g, col, &mut wg);
        for (o, row) in g.chunks(cols).enumerate() {
            bg[o] += row.iter().sum::<f64>();
        }
        if let Some(dx) = dx.as_mut() {
            dcol.fill(0.0);
            gemm_tn(rows, oc, cols, c.weight.data(), g, &mut dcol);
            let img = &mut dx[sample * ch * h * w..(sample + 1) * ch * h * w];
            for ci in 0..ch {
                for ki in 0..k {
                    for kj in 0..k {
                        let r = (ci * k + ki) * k + kj;
                        let src = &dcol[r * cols..(r + 1) * cols];
                        for oi in 0..oh {
                            let dst_row = ci * h * w + (oi * s + ki) * w + kj;
                            for oj in 0..ow {
                                img[dst_row + oj * s] += src[oi * ow + oj];
                            }
                        }
                    }
                }
            }
        }
    }
    c.weight_grad = Tensor::new(vec![oc, rows], wg)?;
    c.bias_grad = Tensor::new(vec![oc], bg)?;
    match dx {
        Some(dx) => Ok(Some(Tensor::new(input_shape.to_vec(), dx)?)),
        None => Ok(None),
    }
}

fn maxpool_forward(size: usize, x: &Tensor) -> Result<(Tensor, Cache)> {
    let shape = x.shape();
    let (n, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(n * ch * oh * ow);
    let mut argmax = Vec::with_capacity(n * ch * oh * ow);
    let data = x.data();
    for plane in 0..n * ch {
        let base = plane * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best_idx = base + oi * size * w + oj * size;
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (oi * size + di) * w + oj * size + dj;
                        if data[idx] > data[best_idx] {
                            best_idx = idx;
                        }
                    }
                }
                out.push(data[best_idx]);
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::new(vec![n, ch, oh, ow], out)?,
        Cache::MaxPool {
            input_shape: shape.to_vec(),
            argmax,
        },
    ))
}

fn dropout_forward(rate: f64, x: &Tensor, train: bool, rng: Option<&mut Rng>) -> Result<(Tensor, Cache)> {
    let rng = match rng {
        Some(rng) if train && rate > 0.0 => rng,
        _ => return Ok((x.clone(), Cache::Dropout(None))),
    };
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Cache::Dropout(Some(mask))))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let c = x.row_len();
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for v in &mut out[start..start + c] {
            *v /= total;
        }
    }
    Ok(Tensor::new(x.shape().to_vec(), out)?)
}

/// Full Jacobian-vector product: `dx_i = s_i * (g_i - sum_j g_j s_j)`.
fn softmax_backward(s: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let c = s.row_len();
    let mut out = Vec::with_capacity(s.len());
    for (srow, grow) in s.data().chunks(c).zip(grad.data().chunks(c)) {
        let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
        out.extend(srow.iter().zip(grow).map(|(si, gi)| si * (gi - dot)));
    }
    Ok(Tensor::new(s.shape().to_vec(), out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_rows(&[vec![1000.0, 0.0, -1000.0], vec![0.1, 0.2, 0.3]]).unwrap();
        let s = softmax_rows(&x).unwrap();
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_backward_matches_explicit_jacobian() {
        let x = Tensor::from_rows(&[vec![0.3, -0.2, 1.1]]).unwrap();
        let s = softmax_rows(&x).unwrap();
        let g = Tensor::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let fast = softmax_backward(&s, &g).unwrap();
        let sd = s.data();
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                let jac = if i == j { sd[i] * (1.0 - sd[i]) } else { -sd[i] * sd[j] };
                acc += jac * g.data()[j];
            }
            assert!((fast.data()[i] - acc).abs() < 1e-15);
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_max() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let mut layer = Layer::MaxPool { size: 2 };
        let (y, cache) = layer.forward(&x, true, None).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = Tensor::new(vec![1, 1, 1, 1], vec![1.5]).unwrap();
        let dx = layer.backward(&cache, &g, true).unwrap().unwrap();
        assert_eq!(dx.data(), &[0.0, 1.5, 0.0, 0.0]);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = Rng::new(9);
        let mut conv = Conv2d::zeros(2, 3, 3, 1);
        for v in conv.weight.data_mut() {
            *v = rng.normal();
        }
        for v in conv.bias.data_mut() {
            *v = rng.normal();
        }
        let x = Tensor::new(vec![1, 2, 5, 6], (0..60).map(|_| rng.normal()).collect()).unwrap();
        let (y, _) = Layer::Conv2d(conv.clone()).forward(&x, false, None).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 4]);
        for o in 0..3 {
            for i in 0..3 {
                for j in 0..4 {
                    let mut acc = conv.bias.data()[o];
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let wv = conv.weight.data()[o * 18 + (c * 3 + ki) * 3 + kj];
                                acc += wv * x.data()[c * 30 + (i + ki) * 6 + j + kj];
                            }
                        }
                    }
                    let got = y.data()[(o * 3 + i) * 4 + j];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn strided_conv_shape() {
        let conv = Layer::Conv2d(Conv2d::zeros(1, 1, 3, 2));
        assert_eq!(conv.output_shape(&[1, 7, 8]), Some(vec![1, 3, 3]));
        assert_eq!(conv.output_shape(&[1, 2, 8]), None);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let mut rng = Rng::new(1);
        let layer = Layer::Dropout { rate: 0.5 };
        let (y, _) = layer.forward(&x, false, Some(&mut rng)).unwrap();
        assert_eq!(y, x);
    }
}
