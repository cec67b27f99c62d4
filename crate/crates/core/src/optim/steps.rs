use super::state::{HyperParams, LayerState, OptState};
use super::{LayerReport, Measurement, StepReport};
use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_norm, gemm, matrix_fractional_power, newton_schulz_orthogonalize, numerical_rank,
    spectral_norm_default, Matrix, NS_TOL, RANK_TOL,
};
use crate::model::{Grads, LayerRole, Mlp};
use crate::scaling::{effective_dims, OptimizerKind, ScalingRule};

/// LAMB skips a layer when `‖r + λW‖_F` falls below this.
pub const LAMB_GUARD: f64 = 1e-12;

/// `ΔW = −scale · psi`.
struct Update {
    psi: Matrix,
    scale: f64,
    unconverged: bool,
}

enum Outcome {
    Apply(Update),
    Skip,
}

struct Ctx<'a> {
    w: &'a Matrix,
    g: &'a Matrix,
    hp: &'a HyperParams,
    rule: &'a ScalingRule,
    role: LayerRole,
    ratio: f64,
    /// Step number being taken, starting at 1.
    t: u64,
}

pub fn step(
    mlp: &mut Mlp,
    grads: &Grads,
    state: &mut OptState,
    hp: &HyperParams,
    rules: &[ScalingRule],
) -> Result<StepReport> {
    match state.kind {
        OptimizerKind::AdamW => step_adamw(mlp, grads, state, hp, rules),
        OptimizerKind::Adopt => step_adopt(mlp, grads, state, hp, rules),
        OptimizerKind::Lamb => step_lamb(mlp, grads, state, hp, rules),
        OptimizerKind::Sophia => step_sophia(mlp, grads, state, hp, rules),
        OptimizerKind::Shampoo => step_shampoo(mlp, grads, state, hp, rules),
        OptimizerKind::Muon => step_muon(mlp, grads, state, hp, rules),
    }
}

pub fn step_adamw(
    mlp: &mut Mlp,
    grads: &Grads,
    state: &mut OptState,
    hp: &HyperParams,
    rules: &[ScalingRule],
) -> Result<StepReport> {
    run(OptimizerKind::AdamW, mlp, grads, state, hp, rules, adamw_layer)
}

pub fn step_adopt(
    mlp: &mut Mlp,
    grads: &Grads,
    state: &mut OptState,
    hp: &HyperParams,
    rules: &[ScalingRule],
) -> Result<StepReport> {
    run(OptimizerKind::Adopt, mlp, grads, state, hp, rules, adopt_layer)
}

pub fn step_lamb(
    mlp: &mut Mlp,
    grads: &Grads,
    state: &mut OptState,
    hp: &HyperParams,
    rules: &[ScalingRule],
) -> Result<StepReport> {
    run(OptimizerKind::Lamb, mlp, grads, state, hp, rules, lamb_layer)
}

/// Uses the Hessian estimate already in `state`; see `refresh_hessian`.
pub fn step_sophia(
    mlp: &mut Mlp,
    grads: &Grads,
    state: &mut OptState,
    hp: &HyperParams,
    rules: &[ScalingRule],
) -> Result<StepReport> {
    run(OptimizerKind::Sophia, mlp, grads, state, hp, rules, sophia_layer)
}

pub fn step_shampoo(
    mlp: &mut Mlp,
    grads: &Grads,
    state: &mut OptState,
    hp: &HyperParams,
    rules: &[ScalingRule],
) -> Result<StepReport> {
    run(OptimizerKind::Shampoo, mlp, grads, state, hp, rules, shampoo_layer)
}

/// Orthogonalized momentum on hidden layers, AdamW everywhere else.
pub fn step_muon(
    mlp: &mut Mlp,
    grads: &Grads,
    state: &mut OptState,
    hp: &HyperParams,
    rules: &[ScalingRule],
) -> Result<StepReport> {
    run(OptimizerKind::Muon, mlp, grads, state, hp, rules, |ctx, st| {
        if ctx.role == LayerRole::Hidden {
            muon_layer(ctx, st)
        } else {
            adamw_layer(ctx, st)
        }
    })
}

fn run(
    kind: OptimizerKind,
    mlp: &mut Mlp,
    grads: &Grads,
    state: &mut OptState,
    hp: &HyperParams,
    rules: &[ScalingRule],
    layer_step: impl Fn(&Ctx, &mut LayerState) -> Result<Outcome>,
) -> Result<StepReport> {
    hp.validate()?;
    if state.kind != kind {
        return Err(Error::InvalidHyperParam(format!(
            "state was built for {} but a {kind} step was requested",
            state.kind
        )));
    }
    let depth = mlp.depth();
    if rules.len() != depth || grads.weights.len() != depth || state.layers.len() != depth {
        return Err(Error::Shape(format!(
            "{depth} layers but {} rules, {} gradients and {} states",
            rules.len(),
            grads.weights.len(),
            state.layers.len()
        )));
    }

    let t = state.t + 1;
    let mut staged = Vec::with_capacity(depth);
    for (l, layer) in mlp.layers().iter().enumerate() {
        let g = &grads.weights[l];
        if g.shape() != layer.weight().shape() {
            return Err(Error::Shape(format!("gradient for layer {} has the wrong shape", l + 1)));
        }
        let (n_out, n_in) = effective_dims(&layer.spec);
        let ctx = Ctx {
            w: layer.weight(),
            g,
            hp,
            rule: &rules[l],
            role: layer.spec.role,
            ratio: (n_out as f64 / n_in as f64).sqrt(),
            t,
        };
        let mut st = state.layers[l].clone();
        let outcome = layer_step(&ctx, &mut st)?;
        if let Outcome::Apply(u) = &outcome {
            if !(u.psi.is_finite() && u.scale.is_finite()) {
                return Err(Error::NonFinite(format!("{kind} update for layer {}", l + 1)));
            }
        }
        if !st.is_finite() {
            return Err(Error::NonFinite(format!("{kind} state for layer {}", l + 1)));
        }
        staged.push((st, outcome));
    }

    let mut reports = Vec::with_capacity(depth);
    for (l, (st, outcome)) in staged.into_iter().enumerate() {
        let mut report = LayerReport {
            effective_lr: hp.eta * rules[l].lr_mult,
            skipped: false,
            unconverged: false,
            psi_spectral: None,
            dw_spectral: None,
            dw_frobenius: None,
            update_rank: None,
        };
        match outcome {
            Outcome::Apply(u) => {
                let delta = u.psi.scale(-u.scale);
                if state.measurement != Measurement::Off {
                    let psi_norm = spectral_norm_default(&u.psi);
                    report.psi_spectral = Some(psi_norm);
                    report.dw_spectral = Some(spectral_norm_default(&delta));
                    report.dw_frobenius = Some(frobenius_norm(&delta));
                }
                if state.measurement == Measurement::NormsAndRank {
                    report.update_rank = Some(numerical_rank(&delta, RANK_TOL));
                }
                report.unconverged = u.unconverged;
                mlp.apply_delta(l, &delta);
            }
            Outcome::Skip => {
                report.skipped = true;
                if state.measurement != Measurement::Off {
                    report.psi_spectral = Some(0.0);
                    report.dw_spectral = Some(0.0);
                    report.dw_frobenius = Some(0.0);
                }
                if state.measurement == Measurement::NormsAndRank {
                    report.update_rank = Some(0);
                }
            }
        }
        state.layers[l] = st;
        reports.push(report);
    }
    state.t = t;
    Ok(StepReport { t, layers: reports })
}

fn take<'a>(slot: &'a mut Option<Matrix>, name: &str) -> Result<&'a mut Matrix> {
    slot.as_mut()
        .ok_or_else(|| Error::InvalidHyperParam(format!("optimizer state is missing {name}")))
}

fn check_shape(m: &Matrix, like: &Matrix, name: &str) -> Result<()> {
    if m.shape() == like.shape() {
        Ok(())
    } else {
        Err(Error::Shape(format!("{name} does not match the weight shape")))
    }
}

// 0/0 is taken as 0 so that zero gradients with zero ε stay finite.
fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Updates both Adam moments and returns `m̂ / (√v̂ + ε·eps_mult)`.
fn adam_ratio(ctx: &Ctx, st: &mut LayerState) -> Result<Matrix> {
    let hp = ctx.hp;
    let m = take(&mut st.m, "m")?;
    check_shape(m, ctx.g, "m")?;
    for (mi, &gi) in m.as_mut_slice().iter_mut().zip(ctx.g.as_slice()) {
        *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi;
    }
    let v = take(&mut st.v, "v")?;
    check_shape(v, ctx.g, "v")?;
    for (vi, &gi) in v.as_mut_slice().iter_mut().zip(ctx.g.as_slice()) {
        *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * gi * gi;
    }
    let t = ctx.t.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let eps = hp.eps * ctx.rule.eps_mult;
    let m = st.m.as_ref().expect("checked above");
    let v = st.v.as_ref().expect("checked above");
    Ok(m.zip_map(v, |mi, vi| ratio(mi / c1, (vi / c2).sqrt() + eps)))
}

fn with_decay(mut psi: Matrix, ctx: &Ctx) -> Matrix {
    let decay = ctx.hp.lambda * ctx.rule.wd_mult;
    if decay != 0.0 {
        psi.axpy(decay, ctx.w);
    }
    psi
}

fn adamw_layer(ctx: &Ctx, st: &mut LayerState) -> Result<Outcome> {
    let r = adam_ratio(ctx, st)?;
    Ok(Outcome::Apply(Update {
        psi: with_decay(r, ctx),
        scale: ctx.hp.eta * ctx.rule.lr_mult,
        unconverged: false,
    }))
}

fn adopt_layer(ctx: &Ctx, st: &mut LayerState) -> Result<Outcome> {
    let hp = ctx.hp;
    let v = take(&mut st.v, "v")?;
    check_shape(v, ctx.g, "v")?;
    if ctx.t == 1 {
        *v = ctx.g.map(|g| g * g);
        return Ok(Outcome::Apply(Update {
            psi: Matrix::zeros(ctx.g.rows(), ctx.g.cols()),
            scale: 0.0,
            unconverged: false,
        }));
    }
    let eps = hp.eps * ctx.rule.eps_mult;
    let normalized = ctx.g.zip_map(v, |g, vi| ratio(g, vi.sqrt().max(eps)));
    let m = take(&mut st.m, "m")?;
    check_shape(m, ctx.g, "m")?;
    for (mi, &ni) in m.as_mut_slice().iter_mut().zip(normalized.as_slice()) {
        *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * ni;
    }
    let psi = with_decay(m.clone(), ctx);
    let v = st.v.as_mut().expect("checked above");
    for (vi, &gi) in v.as_mut_slice().iter_mut().zip(ctx.g.as_slice()) {
        *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * gi * gi;
    }
    Ok(Outcome::Apply(Update {
        psi,
        scale: hp.eta * ctx.rule.lr_mult,
        unconverged: false,
    }))
}

fn lamb_layer(ctx: &Ctx, st: &mut LayerState) -> Result<Outcome> {
    let u = with_decay(adam_ratio(ctx, st)?, ctx);
    let denom = frobenius_norm(&u);
    if denom < LAMB_GUARD {
        return Ok(Outcome::Skip);
    }
    let trust = frobenius_norm(ctx.w) / denom;
    Ok(Outcome::Apply(Update {
        psi: u,
        scale: ctx.hp.eta * ctx.rule.lr_mult * trust,
        unconverged: false,
    }))
}

fn sophia_layer(ctx: &Ctx, st: &mut LayerState) -> Result<Outcome> {
    let hp = ctx.hp;
    let m = take(&mut st.m, "m")?;
    check_shape(m, ctx.g, "m")?;
    for (mi, &gi) in m.as_mut_slice().iter_mut().zip(ctx.g.as_slice()) {
        *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi;
    }
    let h = st
        .h
        .as_ref()
        .ok_or_else(|| Error::InvalidHyperParam("optimizer state is missing h".into()))?;
    check_shape(h, ctx.g, "h")?;
    let eps = hp.eps * ctx.rule.eps_mult;
    let clipped = m.zip_map(h, |mi, hi| ratio(mi, (hp.gamma * hi).max(eps)).clamp(-1.0, 1.0));
    Ok(Outcome::Apply(Update {
        psi: with_decay(clipped, ctx),
        scale: hp.eta * ctx.rule.lr_mult,
        unconverged: false,
    }))
}

fn shampoo_layer(ctx: &Ctx, st: &mut LayerState) -> Result<Outcome> {
    let g = ctx.g;
    let left = take(&mut st.left, "left preconditioner")?;
    if left.shape() != (g.rows(), g.rows()) {
        return Err(Error::Shape("left preconditioner does not match the layer".into()));
    }
    left.axpy(1.0, &g.matmul_t(g));
    left.symmetrize();
    let right = take(&mut st.right, "right preconditioner")?;
    if right.shape() != (g.cols(), g.cols()) {
        return Err(Error::Shape("right preconditioner does not match the layer".into()));
    }
    right.axpy(1.0, &g.t_matmul(g));
    right.symmetrize();

    let left = st.left.as_ref().expect("checked above");
    let right = st.right.as_ref().expect("checked above");
    let (Ok(l_root), Ok(r_root)) = (
        matrix_fractional_power(left, -0.25, RANK_TOL),
        matrix_fractional_power(right, -0.25, RANK_TOL),
    ) else {
        return Ok(Outcome::Skip);
    };
    let psi = gemm(1.0, &gemm(1.0, &l_root, false, g, false), false, &r_root, false);
    Ok(Outcome::Apply(Update {
        psi,
        scale: ctx.hp.eta * ctx.rule.lr_mult,
        unconverged: false,
    }))
}

fn muon_layer(ctx: &Ctx, st: &mut LayerState) -> Result<Outcome> {
    let b = take(&mut st.momentum, "momentum")?;
    check_shape(b, ctx.g, "momentum")?;
    b.scale_in_place(ctx.hp.mu);
    b.axpy(1.0, ctx.g);
    match newton_schulz_orthogonalize(b, ctx.hp.ns_iters, NS_TOL) {
        Ok(o) => Ok(Outcome::Apply(Update {
            psi: o.matrix,
            scale: ctx.hp.eta * ctx.rule.lr_mult * ctx.ratio,
            unconverged: !o.converged,
        })),
        Err(Error::ZeroMatrix) => Ok(Outcome::Skip),
        Err(e) => Err(e),
    }
}
