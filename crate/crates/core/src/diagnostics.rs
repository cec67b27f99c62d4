//! Width-sweep coordinate checks and per-layer spectral, rank and
//! feature-gradient probes.

use crate::data::{BatchSampler, TaskData};
use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_norm, numerical_rank, spectral_norm, spectral_norm_default, Matrix, RANK_TOL, SPECTRAL_MAX_ITER,
    SPECTRAL_TOL,
};
use crate::model::{mlp_specs, Activation, Grads, LossKind, Mlp};
use crate::optim::{train_step, HyperParams, OptState};
use crate::par::parallel_map;
use crate::scaling::{derive_rules, effective_dims, OptimizerKind, ParamScheme};

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheckRecord {
    pub width: usize,
    /// 1-based; step 1 is measured before any update.
    pub step: usize,
    /// 1-based layer index.
    pub layer: usize,
    /// Mean over the probe batch of `‖h_l‖₂ / √n_l`.
    pub rms_coord: f64,
    pub rel_to_first: f64,
    /// Training for this width has diverged by this step.
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct CoordCheckSpec {
    pub widths: Vec<usize>,
    pub depth: usize,
    pub kind: OptimizerKind,
    pub scheme: ParamScheme,
    /// Number of recorded steps; there are `steps − 1` updates.
    pub steps: usize,
    pub seed: u64,
    pub activation: Activation,
    pub loss: LossKind,
    pub batch_size: usize,
    /// Leading validation columns used to measure features.
    pub probe_size: usize,
    pub hp: HyperParams,
}

/// Trains one model per width and records every layer's feature scale at
/// each step on a fixed probe batch. A width that diverges keeps producing
/// records, with infinite values and the divergence flag set.
pub fn coordinate_check(spec: &CoordCheckSpec, data: &TaskData, threads: usize) -> Result<Vec<CoordCheckRecord>> {
    if spec.widths.is_empty() {
        return Err(Error::Config("at least one width is required".into()));
    }
    if spec.widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("widths must be strictly ascending".into()));
    }
    if spec.steps == 0 {
        return Err(Error::Config("at least one step is required".into()));
    }
    if spec.probe_size == 0 {
        return Err(Error::Config("probe batch must be nonempty".into()));
    }
    spec.hp.validate()?;
    for &w in &spec.widths {
        mlp_specs(data.input_dim, w, spec.depth, data.output_dim)?;
    }
    let probe = data.val_x.columns(0, spec.probe_size.min(data.n_val()));
    let runs = parallel_map(&spec.widths, threads, |&w| coord_check_width(spec, data, &probe, w));
    let mut out = Vec::new();
    for run in runs {
        out.extend(run?);
    }
    Ok(out)
}

fn coord_check_width(
    spec: &CoordCheckSpec,
    data: &TaskData,
    probe: &Matrix,
    width: usize,
) -> Result<Vec<CoordCheckRecord>> {
    let specs = mlp_specs(data.input_dim, width, spec.depth, data.output_dim)?;
    let mut mlp = Mlp::build(&specs, spec.scheme, spec.kind, spec.activation, spec.seed)?;
    let rules = derive_rules(spec.kind, &specs, spec.scheme);
    let mut state = OptState::with_seed(spec.kind, &mlp, &spec.hp, spec.seed);
    let mut sampler = BatchSampler::new(data.n_train(), spec.batch_size, spec.seed)?;

    let depth = spec.depth;
    let mut first = vec![0.0; depth];
    let mut diverged = false;
    let mut records = Vec::with_capacity(spec.steps * depth);
    for step in 1..=spec.steps {
        let rms = if diverged { None } else { feature_rms(&mlp, probe).ok() };
        match rms {
            Some(rms) => {
                if step == 1 {
                    first.clone_from(&rms);
                }
                for (l, &r) in rms.iter().enumerate() {
                    records.push(CoordCheckRecord {
                        width,
                        step,
                        layer: l + 1,
                        rms_coord: r,
                        rel_to_first: r / first[l],
                        diverged: false,
                    });
                }
            }
            None => {
                diverged = true;
                records.extend((1..=depth).map(|layer| CoordCheckRecord {
                    width,
                    step,
                    layer,
                    rms_coord: f64::INFINITY,
                    rel_to_first: f64::INFINITY,
                    diverged: true,
                }));
            }
        }
        if step < spec.steps && !diverged {
            let idx = sampler.next_indices();
            let x = data.train_x.select_columns(&idx);
            let y = data.train_y.select(&idx);
            if train_step(&mut mlp, &mut state, &spec.hp, &rules, &x, &y, spec.loss).is_err() {
                diverged = true;
            }
        }
    }
    Ok(records)
}

/// Per layer `1..=L`, the batch mean of `‖h_l‖₂ / √n_l`.
pub fn feature_rms(mlp: &Mlp, probe: &Matrix) -> Result<Vec<f64>> {
    let trace = mlp.forward(probe)?;
    let rms: Vec<f64> = trace.features[1..]
        .iter()
        .map(|h| {
            let scale = 1.0 / (h.rows() as f64).sqrt();
            let sum: f64 = (0..h.cols())
                .map(|b| (0..h.rows()).map(|i| h[(i, b)] * h[(i, b)]).sum::<f64>().sqrt())
                .sum();
            sum * scale / h.cols() as f64
        })
        .collect();
    if rms.iter().all(|r| r.is_finite()) {
        Ok(rms)
    } else {
        Err(Error::NonFinite("features".into()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralProbe {
    /// 1-based layer index.
    pub layer: usize,
    /// Largest width-scaled dimension of the layer.
    pub width: usize,
    /// `‖W_l‖*` before the update.
    pub spec_w: f64,
    /// `‖ΔW_l‖*`.
    pub spec_dw: f64,
    /// `√(n_out_eff / n_in_eff)`.
    pub target: f64,
    pub w_ratio: f64,
    pub dw_ratio: f64,
    /// Both power iterations converged.
    pub converged: bool,
}

/// Compares each layer's weight and update spectral norms against the
/// dimension ratio they should track.
pub fn spectral_probe(before: &Mlp, after: &Mlp) -> Result<Vec<SpectralProbe>> {
    if before.specs() != after.specs() {
        return Err(Error::Shape("spectral probe needs two models with the same layers".into()));
    }
    before
        .layers()
        .iter()
        .zip(after.layers())
        .enumerate()
        .map(|(l, (b, a))| {
            let (n_out, n_in) = effective_dims(&b.spec);
            let target = (n_out as f64 / n_in as f64).sqrt();
            let (spec_w, conv_w) = norm_pair(b.weight())?;
            let (spec_dw, conv_dw) = norm_pair(&a.weight().sub(b.weight()))?;
            Ok(SpectralProbe {
                layer: l + 1,
                width: n_out.max(n_in),
                spec_w,
                spec_dw,
                target,
                w_ratio: spec_w / target,
                dw_ratio: spec_dw / target,
                converged: conv_w && conv_dw,
            })
        })
        .collect()
}

fn norm_pair(m: &Matrix) -> Result<(f64, bool)> {
    let est = spectral_norm(m, SPECTRAL_TOL, SPECTRAL_MAX_ITER)?;
    Ok((est.value, est.converged))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankProbe {
    pub rank: usize,
    /// `‖G‖_F / ‖G‖*`; 1 for a zero gradient.
    pub ratio: f64,
}

pub fn rank_probe(grads: &Grads) -> Vec<RankProbe> {
    grads
        .weights
        .iter()
        .map(|g| {
            let rank = numerical_rank(g, RANK_TOL);
            let spec = spectral_norm_default(g);
            let ratio = if spec == 0.0 { 1.0 } else { frobenius_norm(g) / spec };
            RankProbe { rank, ratio }
        })
        .collect()
}

/// `‖∇_{h_l}L‖₂ · √n_l` for every layer, from a single-sample backward pass.
pub fn feature_grad_probe(grads: &Grads) -> Result<Vec<f64>> {
    grads
        .features
        .iter()
        .map(|g| {
            if g.cols() != 1 {
                return Err(Error::Shape(format!(
                    "feature-gradient probe needs batch size 1, got {}",
                    g.cols()
                )));
            }
            Ok(frobenius_norm(g) * (g.rows() as f64).sqrt())
        })
        .collect()
}
