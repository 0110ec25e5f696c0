//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! Parameters live in a [`ParamStore`] that outlives any single computation.
//! A [`Graph`] borrows the store immutably, records every operation on a tape
//! while computing forward values, and [`Graph::backward`] walks the tape in
//! reverse to produce [`Gradients`]. Gradients are folded back into the store
//! with [`ParamStore::accumulate`] and consumed by the [`Adam`] optimizer.
//!
//! ```
//! use tdan_core::autodiff::{Graph, Mode, ParamStore, Tensor};
//!
//! let mut store = ParamStore::new();
//! let w = store.insert("w", Tensor::row(vec![1.0, -2.0, 3.0])).unwrap();
//! let mut g = Graph::new(&store, Mode::Eval);
//! let wv = g.param(w);
//! let y = g.tanh(wv).unwrap();
//! let loss = g.sum(y);
//! let grads = g.backward(loss).unwrap();
//! let dw = grads.param(w).unwrap();
//! assert!((dw.data()[0] - (1.0 - 1.0f64.tanh().powi(2))).abs() < 1e-12);
//! ```

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, Mode, Var};
pub use tensor::{ParamGrads, ParamId, ParamStore, Parameter, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor data has {len} values but shape {shape:?} needs {expected}")]
    DataLength {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },
    #[error("tensors of rank {0} are not supported (max rank 2)")]
    Rank(usize),
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` already exists")]
    DuplicateParameter(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
