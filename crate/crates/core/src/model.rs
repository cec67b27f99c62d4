//! Bias-free MLP with input/hidden/output layer roles, a forward pass that
//! keeps every feature batch, and exact manual backpropagation.
//!
//! Feature batches hold one sample per column. Layer `l` computes
//! `h_l = W_l φ(h_{l-1})`, where `W_l = σ_l W̃_l` is the effective weight and `φ`
//! is skipped on the raw input.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};
use crate::scaling::{derive_rule, OptimizerKind, ParamScheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerRole {
    Input,
    Hidden,
    Output,
}

impl fmt::Display for LayerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerRole::Input => "input",
            LayerRole::Hidden => "hidden",
            LayerRole::Output => "output",
        })
    }
}

/// Shape and width-dependence of one weight matrix `W_l ∈ R^{fan_out × fan_in}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub role: LayerRole,
    /// Whether `fan_in` grows with model width.
    pub width_scaled_in: bool,
    /// Whether `fan_out` grows with model width.
    pub width_scaled_out: bool,
}

impl LayerSpec {
    pub fn new(
        fan_in: usize,
        fan_out: usize,
        role: LayerRole,
        width_scaled_in: bool,
        width_scaled_out: bool,
    ) -> Result<Self> {
        let spec = Self {
            fan_in,
            fan_out,
            role,
            width_scaled_in,
            width_scaled_out,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Fixed-size input (e.g. features or vocabulary) into a width-scaled layer.
    pub fn input(input_dim: usize, width: usize) -> Result<Self> {
        Self::new(input_dim, width, LayerRole::Input, false, true)
    }

    pub fn hidden(width_in: usize, width_out: usize) -> Result<Self> {
        Self::new(width_in, width_out, LayerRole::Hidden, true, true)
    }

    /// Width-scaled layer into a fixed-size readout.
    pub fn output(width: usize, output_dim: usize) -> Result<Self> {
        Self::new(width, output_dim, LayerRole::Output, true, false)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_in == 0 || self.fan_out == 0 {
            return Err(Error::InvalidSpec(format!(
                "layer dimensions must be positive, got {}x{}",
                self.fan_out, self.fan_in
            )));
        }
        match self.role {
            LayerRole::Input if self.width_scaled_in => Err(Error::InvalidSpec(
                "input layers cannot have a width-scaled fan-in".into(),
            )),
            LayerRole::Output if self.width_scaled_out => Err(Error::InvalidSpec(
                "output layers cannot have a width-scaled fan-out".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Layer specs for an MLP with `depth` weight matrices (`depth ≥ 2`):
/// one input layer, `depth − 2` square hidden layers and one output layer.
pub fn mlp_specs(input_dim: usize, width: usize, depth: usize, output_dim: usize) -> Result<Vec<LayerSpec>> {
    if depth < 2 {
        return Err(Error::InvalidSpec(format!("depth must be at least 2, got {depth}")));
    }
    let mut specs = vec![LayerSpec::input(input_dim, width)?];
    for _ in 0..depth - 2 {
        specs.push(LayerSpec::hidden(width, width)?);
    }
    specs.push(LayerSpec::output(width, output_dim)?);
    Ok(specs)
}

pub fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec("an MLP needs at least one layer".into()));
    }
    for spec in specs {
        spec.validate()?;
    }
    for (l, pair) in specs.windows(2).enumerate() {
        if pair[0].fan_out != pair[1].fan_in {
            return Err(Error::InvalidSpec(format!(
                "layer {} has fan_out {} but layer {} has fan_in {}",
                l + 1,
                pair[0].fan_out,
                l + 2,
                pair[1].fan_in
            )));
        }
        if pair[0].width_scaled_out != pair[1].width_scaled_in {
            return Err(Error::InvalidSpec(format!(
                "layers {} and {} disagree on whether their shared dimension is width-scaled",
                l + 1,
                l + 2
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y = φ(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `½‖h_L − y‖²`, averaged over the batch.
    #[default]
    Mse,
    /// Softmax cross-entropy against a class index per column.
    SoftmaxCe,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "ce" | "softmax_ce" | "softmaxce" | "cross_entropy" => Ok(LossKind::SoftmaxCe),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::SoftmaxCe => "softmax_ce",
        })
    }
}

/// Regression targets (one column per sample) or class labels.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Dense(Matrix),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn batch_size(&self) -> usize {
        match self {
            Targets::Dense(m) => m.cols(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Dense(m) => Targets::Dense(m.select_columns(idx)),
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn scale(&self, k: f64) -> Targets {
        match self {
            Targets::Dense(m) => Targets::Dense(m.scale(k)),
            Targets::Classes(c) => Targets::Classes(c.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub spec: LayerSpec,
    weight: Matrix,
    multiplier: f64,
}

impl Layer {
    /// Effective weight `W_l = σ_l W̃_l`.
    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    /// The multiplier `σ_l`.
    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    /// The un-multiplied parameter `W̃_l`.
    pub fn latent(&self) -> Matrix {
        self.weight.scale(1.0 / self.multiplier)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

impl Mlp {
    /// Samples `W̃_l` with i.i.d. `N(0, init_std²)` entries and applies the
    /// multiplier, both taken from the scheme's rule for `kind`.
    ///
    /// Entries are drawn from one generator seeded with `seed`, layer by layer,
    /// so two schemes with the same seed share the same standard-normal draws.
    pub fn build(
        specs: &[LayerSpec],
        scheme: ParamScheme,
        kind: OptimizerKind,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        validate_chain(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|spec| {
                let rule = derive_rule(kind, spec, scheme);
                let latent = Matrix::random_normal(spec.fan_out, spec.fan_in, rule.init_std, &mut rng);
                Layer {
                    spec: *spec,
                    weight: latent.scale(rule.weight_mult),
                    multiplier: rule.weight_mult,
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    /// Assembles a network from explicit latent weights `W̃_l` and multipliers.
    pub fn from_parts(
        specs: &[LayerSpec],
        latents: Vec<Matrix>,
        multipliers: &[f64],
        activation: Activation,
    ) -> Result<Self> {
        validate_chain(specs)?;
        if latents.len() != specs.len() || multipliers.len() != specs.len() {
            return Err(Error::InvalidSpec("one weight and one multiplier per layer required".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        for ((spec, latent), &mult) in specs.iter().zip(latents).zip(multipliers) {
            if latent.shape() != (spec.fan_out, spec.fan_in) {
                return Err(Error::Shape(format!(
                    "weight is {}x{} but the layer is {}x{}",
                    latent.rows(),
                    latent.cols(),
                    spec.fan_out,
                    spec.fan_in
                )));
            }
            if !(mult > 0.0 && mult.is_finite()) {
                return Err(Error::InvalidSpec(format!("multiplier must be positive, got {mult}")));
            }
            if !latent.is_finite() {
                return Err(Error::NonFinite("initial weights".into()));
            }
            layers.push(Layer {
                spec: *spec,
                weight: latent.scale(mult),
                multiplier: mult,
            });
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn weight(&self, l: usize) -> &Matrix {
        &self.layers[l].weight
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.fan_out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    /// `W_l += delta` on the effective weight.
    pub fn apply_delta(&mut self, l: usize, delta: &Matrix) {
        self.layers[l].weight.axpy(1.0, delta);
    }

    pub fn set_weight(&mut self, l: usize, weight: Matrix) {
        assert_eq!(weight.shape(), self.layers[l].weight.shape());
        self.layers[l].weight = weight;
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        if x.rows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} rows but the first layer expects {}",
                x.rows(),
                self.input_dim()
            )));
        }
        let depth = self.depth();
        let mut features = Vec::with_capacity(depth + 1);
        let mut activations = Vec::with_capacity(depth);
        features.push(x.clone());
        activations.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let h = gemm(1.0, &layer.weight, false, &activations[l], false);
            if l + 1 < depth {
                activations.push(h.map(|v| self.activation.apply(v)));
            }
            features.push(h);
        }
        Ok(ForwardTrace {
            features,
            activations,
        })
    }

    /// Full-batch loss without keeping the trace.
    pub fn evaluate(&self, x: &Matrix, targets: &Targets, kind: LossKind) -> Result<f64> {
        loss(&self.forward(x)?, targets, kind)
    }

    /// Exact gradients of the batch-mean loss with respect to every effective
    /// weight and every feature batch.
    pub fn backward(&self, trace: &ForwardTrace, targets: &Targets, kind: LossKind) -> Result<Grads> {
        self.check_trace(trace)?;
        let depth = self.depth();
        let mut delta = output_gradient(trace.output(), targets, kind)?;
        let mut weights = vec![None; depth];
        let mut features = vec![None; depth];
        for l in (0..depth).rev() {
            weights[l] = Some(gemm(1.0, &delta, false, &trace.activations[l], true));
            let upstream = if l > 0 {
                let back = gemm(1.0, &self.layers[l].weight, true, &delta, false);
                let h = &trace.features[l];
                let a = &trace.activations[l];
                let act = self.activation;
                let mut g = back;
                for ((gv, &hv), &av) in g.as_mut_slice().iter_mut().zip(h.as_slice()).zip(a.as_slice()) {
                    *gv *= act.derivative(hv, av);
                }
                Some(g)
            } else {
                None
            };
            features[l] = Some(delta);
            if let Some(next) = upstream {
                delta = next;
            } else {
                break;
            }
        }
        Ok(Grads {
            weights: weights.into_iter().map(|w| w.expect("every layer visited")).collect(),
            features: features.into_iter().map(|f| f.expect("every layer visited")).collect(),
        })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let depth = self.depth();
        if trace.features.len() != depth + 1 || trace.activations.len() != depth {
            return Err(Error::Shape(format!(
                "trace has {} feature batches for a {depth}-layer network",
                trace.features.len()
            )));
        }
        let batch = trace.batch_size();
        for (l, layer) in self.layers.iter().enumerate() {
            let h_in = &trace.activations[l];
            let h_out = &trace.features[l + 1];
            if h_in.shape() != (layer.spec.fan_in, batch) || h_out.shape() != (layer.spec.fan_out, batch) {
                return Err(Error::Shape(format!("trace does not match layer {}", l + 1)));
            }
        }
        Ok(())
    }
}

/// Everything computed by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `h_0 = x, h_1, …, h_L` (pre-activation features).
    pub features: Vec<Matrix>,
    /// Inputs to each layer: `x, φ(h_1), …, φ(h_{L−1})`.
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.features.last().expect("trace always holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.features[0].cols()
    }
}

/// Gradients of the batch-mean loss.
#[derive(Clone, Debug)]
pub struct Grads {
    /// `∇_{W_l} L` for `l = 1..L` (index `l − 1`).
    pub weights: Vec<Matrix>,
    /// `∇_{h_l} L` for `l = 1..L` (index `l − 1`).
    pub features: Vec<Matrix>,
}

impl Grads {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
    }
}

pub fn loss(trace: &ForwardTrace, targets: &Targets, kind: LossKind) -> Result<f64> {
    let out = trace.output();
    check_targets(out, targets, kind)?;
    let batch = out.cols() as f64;
    let total = match (kind, targets) {
        (LossKind::Mse, Targets::Dense(y)) => 0.5 * out.sub(y).sum_squares(),
        (LossKind::SoftmaxCe, Targets::Classes(labels)) => {
            let mut total = 0.0;
            for (b, &label) in labels.iter().enumerate() {
                let column = out.column(b);
                total += log_sum_exp(&column) - column[label];
            }
            total
        }
        _ => unreachable!("checked above"),
    };
    Ok(total / batch)
}

fn output_gradient(out: &Matrix, targets: &Targets, kind: LossKind) -> Result<Matrix> {
    check_targets(out, targets, kind)?;
    let inv_batch = 1.0 / out.cols() as f64;
    Ok(match (kind, targets) {
        (LossKind::Mse, Targets::Dense(y)) => out.zip_map(y, |h, t| (h - t) * inv_batch),
        (LossKind::SoftmaxCe, Targets::Classes(labels)) => {
            let mut grad = Matrix::zeros(out.rows(), out.cols());
            for (b, &label) in labels.iter().enumerate() {
                let column = out.column(b);
                let lse = log_sum_exp(&column);
                for (i, &z) in column.iter().enumerate() {
                    let p = (z - lse).exp();
                    grad[(i, b)] = (p - if i == label { 1.0 } else { 0.0 }) * inv_batch;
                }
            }
            grad
        }
        _ => unreachable!("checked above"),
    })
}

fn check_targets(out: &Matrix, targets: &Targets, kind: LossKind) -> Result<()> {
    match (kind, targets) {
        (LossKind::Mse, Targets::Dense(y)) if y.shape() == out.shape() => Ok(()),
        (LossKind::Mse, Targets::Dense(y)) => Err(Error::Shape(format!(
            "targets are {}x{} but the output is {}x{}",
            y.rows(),
            y.cols(),
            out.rows(),
            out.cols()
        ))),
        (LossKind::SoftmaxCe, Targets::Classes(labels)) => {
            if labels.len() != out.cols() {
                return Err(Error::Shape(format!(
                    "{} labels for a batch of {}",
                    labels.len(),
                    out.cols()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&c| c >= out.rows()) {
                return Err(Error::Shape(format!(
                    "label {bad} out of range for {} classes",
                    out.rows()
                )));
            }
            Ok(())
        }
        (kind, _) => Err(Error::Shape(format!("{kind} loss does not accept these targets"))),
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
