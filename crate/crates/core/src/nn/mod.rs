//! Minimal dense-network toolkit: forward passes with taped activations,
//! exact reverse-mode gradients, Adam, and finite-difference checking.
//!
//! Everything is plain `f64` on the CPU. Networks are small and fixed in
//! shape, so gradients are written out by hand per composite rather than
//! through a general autodiff graph; `gradcheck` guards the derivations.

mod adam;
mod gradcheck;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{central_difference, max_relative_error, relative_error};
pub use mlp::{standard_normal, Activation, DenseParams, FlatReader, Mlp, MlpGrad, MlpTape};
