//! Dense row-major `f64` tensors and the kernels the rest of the crate uses.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("{op} domain error at index {index}: value {value}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Elementwise scalar functions accepted by [`Tensor::map_unary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Exp,
    Ln,
    Pow(f64),
    Neg,
    Relu,
    Elu(f64),
    LeakyRelu(f64),
}

impl UnaryOp {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Exp => x.exp(),
            UnaryOp::Ln => x.ln(),
            UnaryOp::Pow(c) => x.powf(c),
            UnaryOp::Neg => -x,
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Elu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x.exp_m1()
                }
            }
            UnaryOp::LeakyRelu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
            UnaryOp::Pow(_) => "pow",
            UnaryOp::Neg => "neg",
            UnaryOp::Relu => "relu",
            UnaryOp::Elu(_) => "elu",
            UnaryOp::LeakyRelu(_) => "leaky_relu",
        }
    }

    fn in_domain(self, x: f64) -> bool {
        match self {
            UnaryOp::Ln => x > 0.0,
            UnaryOp::Pow(c) if c.fract() != 0.0 => x >= 0.0,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    /// Index of the maximum, stored as `f64`; ties go to the lowest index.
    Argmax,
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Builds a rank-2 tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for owners that update values in place (optimizers,
    /// gradient accumulation). Callers keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of elements per leading-axis entry.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_shape(shape)
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    /// Rows selected by index along the leading axis.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(indices.len());
        } else {
            shape[0] = indices.len();
        }
        Self { shape, data }
    }

    fn require_rank(&self, op: &'static str, expected: usize) -> Result<()> {
        if self.rank() != expected {
            return Err(TensorError::Rank {
                op,
                expected,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn transpose(&self) -> Result<Self> {
        self.require_rank("transpose", 2)?;
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data,
        })
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        self.require_rank("matmul", 2)?;
        other.require_rank("matmul", 2)?;
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, &other.data, &mut out);
        check_finite(&out)?;
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn map_unary(&self, op: UnaryOp) -> Result<Self> {
        if let Some(index) = self.data.iter().position(|&x| !op.in_domain(x)) {
            return Err(TensorError::Domain {
                op: op.name(),
                index,
                value: self.data[index],
            });
        }
        let data: Vec<f64> = self.data.iter().map(|&x| op.apply(x)).collect();
        check_finite(&data)?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn reduce(&self, op: ReduceOp, axis: usize) -> Result<Self> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let lane = (0..len).map(|j| self.data[(o * len + j) * inner + i]);
                out.push(reduce_lane(op, lane, len));
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Self { shape, data: out })
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "zip_with",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        check_finite(&data)?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Per-row argmax of a rank-2 tensor, lowest index on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|r| argmax(self.row(r)))
            .collect()
    }
}

fn reduce_lane(op: ReduceOp, lane: impl Iterator<Item = f64>, len: usize) -> f64 {
    match op {
        ReduceOp::Sum => lane.sum(),
        ReduceOp::Mean => lane.sum::<f64>() / len as f64,
        ReduceOp::Max => lane.fold(f64::NEG_INFINITY, f64::max),
        ReduceOp::Argmax => {
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0usize;
            for (j, v) in lane.enumerate() {
                if v > best {
                    best = v;
                    best_idx = j;
                }
            }
            best_idx as f64
        }
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `out += a (m x k) * b (k x n)`, row-major, i-k-j order.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// `out += a^T * b` where `a` is `k x m` and `b` is `k x n`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_pi * b_pj;
            }
        }
    }
}

/// `out += a * b^T` where `a` is `m x k` and `b` is `n x k`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * n + j] += dot;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(eye.matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = random(&[5, 7], &mut rng);
        let b = random(&[7, 3], &mut rng);
        let c = a.matmul(&b).unwrap();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_kernels_agree_with_matmul() {
        let mut rng = Rng::new(12);
        let a = random(&[4, 6], &mut rng);
        let b = random(&[4, 5], &mut rng);
        let mut tn = vec![0.0; 30];
        gemm_tn(6, 4, 5, a.data(), b.data(), &mut tn);
        let expect = a.transpose().unwrap().matmul(&b).unwrap();
        for (x, y) in tn.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = random(&[5, 6], &mut rng);
        let mut nt = vec![0.0; 20];
        gemm_nt(4, 6, 5, a.data(), c.data(), &mut nt);
        let expect = a.matmul(&c.transpose().unwrap()).unwrap();
        for (x, y) in nt.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn unary_examples() {
        let t = Tensor::from_vec(vec![0.0]).unwrap();
        assert_eq!(t.map_unary(UnaryOp::Exp).unwrap().data(), &[1.0]);
        let t = Tensor::from_vec(vec![0.25]).unwrap();
        assert_eq!(t.map_unary(UnaryOp::Pow(0.5)).unwrap().data(), &[0.5]);
        let t = Tensor::from_vec(vec![-1.0]).unwrap();
        let elu = t.map_unary(UnaryOp::Elu(1.0)).unwrap().data()[0];
        // e^-1 - 1
        assert!((elu - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn unary_domain_errors() {
        let t = Tensor::from_vec(vec![1.0, 0.0]).unwrap();
        match t.map_unary(UnaryOp::Ln).unwrap_err() {
            TensorError::Domain { index, value, .. } => {
                assert_eq!(index, 1);
                assert_eq!(value, 0.0);
            }
            e => panic!("unexpected {e}"),
        }
        let t = Tensor::from_vec(vec![-2.0]).unwrap();
        assert!(t.map_unary(UnaryOp::Pow(0.5)).is_err());
        // integer exponents accept negatives
        assert_eq!(t.map_unary(UnaryOp::Pow(2.0)).unwrap().data(), &[4.0]);
    }

    #[test]
    fn reduce_examples() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.reduce(ReduceOp::Sum, 0).unwrap().data(), &[6.0]);
        let t = Tensor::from_vec(vec![0.2, 0.5, 0.5]).unwrap();
        assert_eq!(t.reduce(ReduceOp::Argmax, 0).unwrap().data(), &[1.0]);
        assert_eq!(argmax(t.data()), 1);
        assert!(matches!(
            t.reduce(ReduceOp::Max, 1),
            Err(TensorError::AxisOutOfRange { axis: 1, rank: 1 })
        ));
    }

    #[test]
    fn mean_along_axis_matches_loop() {
        let mut rng = Rng::new(5);
        let t = random(&[4, 6], &mut rng);
        let m = t.reduce(ReduceOp::Mean, 1).unwrap();
        assert_eq!(m.shape(), &[4]);
        for r in 0..4 {
            let mut acc = 0.0;
            for c in 0..6 {
                acc += t.data()[r * 6 + c];
            }
            assert!((m.data()[r] - acc / 6.0).abs() < 1e-12);
        }
        let cols = t.reduce(ReduceOp::Sum, 0).unwrap();
        assert_eq!(cols.shape(), &[6]);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![1], vec![f64::NAN]),
            Err(TensorError::NonFinite { .. })
        ));
    }

    proptest! {
        #[test]
        fn reshape_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let t = random(&[rows, cols], &mut rng);
            let flat = t.reshape(&[rows * cols]).unwrap();
            let back = flat.reshape(&[rows, cols]).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn matmul_is_associative(m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = random(&[m, k], &mut rng);
            let b = random(&[k, n], &mut rng);
            let c = random(&[n, p], &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.data().iter().fold(1.0f64, |s, x| s.max(x.abs()));
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn ops_are_deterministic(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = random(&[3, 4], &mut rng);
            let b = random(&[4, 2], &mut rng);
            let x = a.matmul(&b).unwrap();
            let y = a.matmul(&b).unwrap();
            prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
