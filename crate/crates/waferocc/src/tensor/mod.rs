//! Dense f32 tensors and reverse-mode automatic differentiation.
//!
//! Training builds a fresh [`Tape`] per step, runs the forward pass through
//! taped ops, and consumes the tape with [`Tape::backward`] to obtain
//! gradients. Inference paths call the raw kernels directly and never touch
//! a tape.

pub mod adam;
pub mod kernels;
pub mod tape;

pub use adam::{Adam, AdamState};
pub use tape::{Gradients, Tape, Var};

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Incompatible operand shapes; carries the op name and both shapes.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// `backward` called on a tensor that is not a 1-element scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// A registered parameter had no gradient when the optimizer stepped.
    MissingGrad { name: String },
    /// NaN or Inf showed up where the numeric contract forbids it.
    NonFinite { context: String },
    /// An operation received an empty input it cannot define a value for.
    EmptyInput { op: &'static str },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::MissingGrad { name } => {
                write!(f, "parameter {name} has no gradient")
            }
            TensorError::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
            TensorError::EmptyInput { op } => write!(f, "{op}: empty input"),
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense n-dimensional array of f32 in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) || n != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn param(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let mut t = Tensor::new(shape, data)?;
        t.requires_grad = true;
        Ok(t)
    }

    /// 2-D view used by the tape: rank 1 is a single row, higher ranks
    /// collapse every leading dimension into rows.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols, cols)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
