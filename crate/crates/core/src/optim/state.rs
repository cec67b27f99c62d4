use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Measurement;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{LayerRole, Mlp};
use crate::scaling::OptimizerKind;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams {
    /// Base learning rate.
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight decay.
    pub lambda: f64,
    /// Sophia clipping scale.
    pub gamma: f64,
    /// Shampoo preconditioner initialization.
    pub delta: f64,
    /// Muon momentum.
    pub mu: f64,
    pub ns_iters: usize,
    /// Steps between Sophia Hessian refreshes.
    pub hess_interval: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda: 0.0,
            gamma: 0.01,
            delta: 1e-8,
            mu: 0.95,
            ns_iters: 50,
            hess_interval: 10,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidHyperParam(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidHyperParam(format!("{name} must be finite and nonnegative, got {v}")))
            }
        };
        nonneg("eta", self.eta)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        nonneg("eps", self.eps)?;
        nonneg("lambda", self.lambda)?;
        nonneg("delta", self.delta)?;
        unit("mu", self.mu)?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidHyperParam(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.ns_iters == 0 {
            return Err(Error::InvalidHyperParam("ns_iters must be at least 1".into()));
        }
        if self.hess_interval == 0 {
            return Err(Error::InvalidHyperParam("hess_interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Accumulators for one layer. Only the ones the optimizer uses are allocated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerState {
    /// First moment.
    pub m: Option<Matrix>,
    /// Second moment.
    pub v: Option<Matrix>,
    /// Hessian-diagonal estimate.
    pub h: Option<Matrix>,
    /// Left preconditioner (`fan_out × fan_out`).
    pub left: Option<Matrix>,
    /// Right preconditioner (`fan_in × fan_in`).
    pub right: Option<Matrix>,
    /// Momentum buffer.
    pub momentum: Option<Matrix>,
}

impl LayerState {
    pub(crate) fn is_finite(&self) -> bool {
        [&self.m, &self.v, &self.h, &self.left, &self.right, &self.momentum]
            .into_iter()
            .flatten()
            .all(Matrix::is_finite)
    }
}

#[derive(Clone, Debug)]
pub struct OptState {
    pub kind: OptimizerKind,
    pub layers: Vec<LayerState>,
    /// Completed steps.
    pub t: u64,
    pub measurement: Measurement,
    pub(crate) rng: ChaCha8Rng,
}

impl OptState {
    pub fn new(kind: OptimizerKind, mlp: &Mlp, hp: &HyperParams) -> Self {
        Self::with_seed(kind, mlp, hp, 0)
    }

    /// `seed` drives the Hessian probes.
    pub fn with_seed(kind: OptimizerKind, mlp: &Mlp, hp: &HyperParams, seed: u64) -> Self {
        let layers = mlp
            .layers()
            .iter()
            .map(|layer| {
                let (rows, cols) = layer.weight().shape();
                let zeros = || Some(Matrix::zeros(rows, cols));
                match kind {
                    OptimizerKind::AdamW | OptimizerKind::Adopt | OptimizerKind::Lamb => LayerState {
                        m: zeros(),
                        v: zeros(),
                        ..LayerState::default()
                    },
                    OptimizerKind::Sophia => LayerState {
                        m: zeros(),
                        h: zeros(),
                        ..LayerState::default()
                    },
                    OptimizerKind::Shampoo => LayerState {
                        left: Some(Matrix::identity(rows).scale(hp.delta)),
                        right: Some(Matrix::identity(cols).scale(hp.delta)),
                        ..LayerState::default()
                    },
                    OptimizerKind::Muon if layer.spec.role == LayerRole::Hidden => LayerState {
                        momentum: zeros(),
                        ..LayerState::default()
                    },
                    OptimizerKind::Muon => LayerState {
                        m: zeros(),
                        v: zeros(),
                        ..LayerState::default()
                    },
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        Self {
            kind,
            layers,
            t: 0,
            measurement: Measurement::Off,
            rng,
        }
    }

    pub fn measuring(mut self, measurement: Measurement) -> Self {
        self.measurement = measurement;
        self
    }

    /// Whether a Sophia run should refresh its Hessian estimate before the next step.
    pub fn hessian_due(&self, hp: &HyperParams) -> bool {
        self.kind == OptimizerKind::Sophia && self.t % hp.hess_interval == 0
    }
}
