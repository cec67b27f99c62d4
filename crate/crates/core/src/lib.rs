//! Width-aware parameterization for adaptive optimizers on bias-free MLPs.
//!
//! Layers are tagged input, hidden or output, and each optimizer gets
//! per-layer multipliers for initialization, learning rate, ε and weight
//! decay. The diagnostics check that feature scales and spectral norms stay
//! put as width grows, and the harness runs width × learning-rate sweeps.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod par;
pub mod scaling;

pub use error::{Error, Result};
