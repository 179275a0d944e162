//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records forward kernels as they run. Parameters live in a
//! [`ParamStore`] and are bound to a tape as leaves; [`Tape::backward`]
//! returns a [`Gradients`] map that an [`Adam`] optimizer consumes.
//!
//! ```
//! use grad::{DenseArray, ParamStore, Tape};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", DenseArray::new(vec![1, 2], vec![0.5, -1.0]).unwrap());
//! let mut tape = Tape::with_params(&store);
//! let x = tape.input(DenseArray::new(vec![2, 1], vec![2.0, 1.0]).unwrap());
//! let wv = tape.param(w);
//! let y = tape.matmul(wv, x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.param(w).data(), &[2.0, 1.0]);
//! ```
//!
//! The only broadcast is [`Tape::add_row`] (bias add); every other op needs
//! matching shapes.

mod array;
mod check;
mod error;
mod optim;
mod params;
mod tape;

pub use array::DenseArray;
pub use check::{gradient_check, gradient_check_subset, gradient_check_with, GradCheckReport, Stencil, FD_STEP};
pub use error::{GradError, Result};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Gradients, Tape, Var, LOG_CLAMP};

/// Logistic function, numerically stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    tape::sigmoid(x)
}
