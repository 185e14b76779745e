//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! Every value in the crate lives in a [`Tensor`]. Differentiable
//! computations are recorded on a [`Graph`]: leaves are bound with
//! [`Graph::constant`], [`Graph::input`] or [`Graph::param`], primitives
//! append nodes, and [`Graph::backward`] walks the tape in reverse.
//!
//! Primitive shape rules (all operands are rank 2, scalars are `[1, 1]`):
//!
//! | primitive | operands | result |
//! |-----------|----------|--------|
//! | `matmul` | `[m,k] x [k,n]` | `[m,n]` |
//! | `add` | equal shapes, or `[m,n] + [1,n]` (row bias) | `[m,n]` |
//! | `multiply` | equal shapes | same |
//! | `scalar_mul` | `[1,1] x [m,n]` | `[m,n]` |
//! | `concat` | equal rows (axis 1) or equal cols (axis 0) | joined |
//! | `slice` | range within the axis | narrowed |
//! | `softmax_rows`, `tanh`, `sigmoid`, `gelu` | any | same |
//! | `rms_norm` | `[m,n]`, optional gain `[1,n]` | `[m,n]` |
//! | `embedding_lookup` | table `[v,d]`, indices `< v` | `[len,d]` |
//! | `cross_entropy` | logits `[m,k]`, `m` optional targets | `[1,1]` |
//! | `mean` | any | `[1,1]` |
//!
//! Nothing else broadcasts.

mod gemm;
mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{grad_check, grad_check_inputs, grad_check_params, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var, RMS_NORM_EPS};
pub use params::{ParamId, ParamStore};

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

/// Errors raised by tensor construction and graph primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
}

/// Immutable dense tensor of `f64` values in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != data.len() {
            return Err(TensorError::InvalidShape { shape: shape.to_vec(), len: data.len() });
        }
        Ok(Self { shape: shape.to_vec(), data: data.into() })
    }

    /// Rank-2 constructor; panics on inconsistent sizes.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(&[rows, cols], data).expect("matrix dimensions must match data length")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Invalid { op: "from_rows", reason: "ragged rows".into() });
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel]).expect("positive dimensions")
    }

    pub fn scalar(value: f64) -> Self {
        Self::matrix(1, 1, vec![value])
    }

    /// Samples every element from `uniform(-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 }).collect();
        Self::new(shape, data).expect("positive dimensions")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a rank-2 tensor (1 for rank 1).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[..self.shape.len() - 1].iter().product()
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(&self.shape, data)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape, self.to_vec())
    }

    /// Stacks equal-width row blocks vertically.
    pub fn vstack(parts: &[&Tensor]) -> Result<Self, TensorError> {
        let cols =
            parts.first().map(|t| t.cols()).ok_or(TensorError::Invalid { op: "vstack", reason: "no parts".into() })?;
        if parts.iter().any(|t| t.cols() != cols) {
            return Err(TensorError::ShapeMismatch {
                op: "vstack",
                shapes: parts.iter().map(|t| t.shape.clone()).collect(),
            });
        }
        let rows = parts.iter().map(|t| t.rows()).sum();
        let data = parts.iter().flat_map(|t| t.data.iter().copied()).collect();
        Self::new(&[rows, cols], data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
