//! Small differentiable-layer engine with hand-written backward passes.
//!
//! Everything is `f64`. Layers take an explicit forward cache in `backward`
//! instead of hiding state, so a trained model is immutable during a step and
//! per-sample passes can run concurrently.

mod checkpoint;
mod layers;
mod loss;
mod optim;

pub use checkpoint::{checkpoint_digest, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Cache, Conv1d, Dense, Dropout, Layer, MaxPool1d, Network, Padding, Trace};
pub use loss::{bce, bce_grad, bce_with_logits, sigmoid};
pub use optim::{AdamState, LrSchedule};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{0}: backward called without a matching forward cache")]
    MissingCache(&'static str),
    #[error("non-finite gradient for parameter `{param}`")]
    NonFinite { param: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::ShapeMismatch {
                op: "tensor",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::ShapeMismatch {
                op: "reshape",
                expected: shape.to_vec(),
                got: self.shape,
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `grads[i] += other[i]` for aligned parameter-gradient lists.
pub fn accumulate(grads: &mut [Tensor], other: &[Tensor]) {
    for (g, o) in grads.iter_mut().zip(other) {
        g.add_assign(o);
    }
}
