//! The six optimizers as per-layer step functions with width-aware multipliers.
//!
//! Every step computes all layer updates first and only then writes them, so
//! a non-finite update anywhere leaves the model and state untouched.

mod hessian;
mod state;
mod steps;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{loss, LossKind, Mlp, Targets};
use crate::scaling::ScalingRule;

pub use hessian::{estimate_hessian_diag, hutchinson_mean, refresh_hessian, HESSIAN_RADIUS};
pub use state::{HyperParams, LayerState, OptState};
pub use steps::{
    step, step_adamw, step_adopt, step_lamb, step_muon, step_shampoo, step_sophia, LAMB_GUARD,
};

/// What to measure while stepping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Measurement {
    #[default]
    Off,
    /// Spectral norms of the update direction and the applied update.
    Norms,
    /// Norms plus the numerical rank of the update.
    NormsAndRank,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerReport {
    /// `η · lr_mult`.
    pub effective_lr: f64,
    /// Set when a degenerate guard left the layer unchanged.
    pub skipped: bool,
    /// Set when an inner iterative solve ran out of budget.
    pub unconverged: bool,
    /// `‖Ψ‖*` where `ΔW = −scale · Ψ`.
    pub psi_spectral: Option<f64>,
    /// `‖ΔW‖*`.
    pub dw_spectral: Option<f64>,
    /// `‖ΔW‖_F`.
    pub dw_frobenius: Option<f64>,
    pub update_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Step counter after this step.
    pub t: u64,
    pub layers: Vec<LayerReport>,
}

/// One training iteration on a batch: forward, backward, a Hessian refresh
/// when Sophia is due for one, then the optimizer step.
///
/// Returns the batch loss before the update.
pub fn train_step(
    mlp: &mut Mlp,
    state: &mut OptState,
    hp: &HyperParams,
    rules: &[ScalingRule],
    x: &Matrix,
    targets: &Targets,
    kind: LossKind,
) -> Result<f64> {
    let trace = mlp.forward(x)?;
    let value = loss(&trace, targets, kind)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let grads = mlp.backward(&trace, targets, kind)?;
    if state.hessian_due(hp) {
        refresh_hessian(mlp, x, targets, kind, state, hp)?;
    }
    step(mlp, &grads, state, hp, rules)?;
    Ok(value)
}
