use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::state::{HyperParams, OptState};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{LossKind, Mlp, Targets};
use crate::scaling::OptimizerKind;

/// Relative finite-difference radius: `r = HESSIAN_RADIUS · (1 + ‖W‖_F)`
/// with `‖W‖_F` taken over all layers.
pub const HESSIAN_RADIUS: f64 = 1e-4;

/// One Hutchinson sample `z ⊙ (H z)` of the Hessian diagonal, per layer.
///
/// `z` is Rademacher over every weight, and `H z` is a central difference
/// of gradients at `W ± r z`. A non-finite product is retried once with a
/// radius 100× smaller.
pub fn estimate_hessian_diag<R: Rng + ?Sized>(
    mlp: &Mlp,
    x: &Matrix,
    targets: &Targets,
    loss: LossKind,
    rng: &mut R,
) -> Result<Vec<Matrix>> {
    if x.cols() == 0 || targets.batch_size() != x.cols() {
        return Err(Error::Shape("Hessian estimate needs a nonempty matching batch".into()));
    }
    let z: Vec<Matrix> = mlp
        .layers()
        .iter()
        .map(|l| {
            let (rows, cols) = l.weight().shape();
            Matrix::from_fn(rows, cols, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
        })
        .collect();
    probe(mlp, x, targets, loss, &z)
}

/// Mean of `probes` Hutchinson samples from a generator seeded with `seed`.
pub fn hutchinson_mean(
    mlp: &Mlp,
    x: &Matrix,
    targets: &Targets,
    loss: LossKind,
    probes: usize,
    seed: u64,
) -> Result<Vec<Matrix>> {
    if probes == 0 {
        return Err(Error::InvalidHyperParam("at least one probe is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum: Option<Vec<Matrix>> = None;
    for _ in 0..probes {
        let est = estimate_hessian_diag(mlp, x, targets, loss, &mut rng)?;
        match &mut sum {
            None => sum = Some(est),
            Some(acc) => acc.iter_mut().zip(&est).for_each(|(a, e)| a.axpy(1.0, e)),
        }
    }
    let inv = 1.0 / probes as f64;
    Ok(sum.expect("probes ≥ 1").into_iter().map(|m| m.scale(inv)).collect())
}

/// `h ← β₂ h + (1 − β₂) ĥ` with a fresh single-probe estimate `ĥ`.
pub fn refresh_hessian(
    mlp: &Mlp,
    x: &Matrix,
    targets: &Targets,
    loss: LossKind,
    state: &mut OptState,
    hp: &HyperParams,
) -> Result<()> {
    if state.kind != OptimizerKind::Sophia {
        return Err(Error::InvalidHyperParam(format!(
            "{} does not keep a Hessian estimate",
            state.kind
        )));
    }
    let est = estimate_hessian_diag(mlp, x, targets, loss, &mut state.rng)?;
    for (layer, e) in state.layers.iter_mut().zip(est) {
        let h = layer
            .h
            .as_mut()
            .ok_or_else(|| Error::InvalidHyperParam("optimizer state is missing h".into()))?;
        h.scale_in_place(hp.beta2);
        h.axpy(1.0 - hp.beta2, &e);
    }
    Ok(())
}

fn probe(mlp: &Mlp, x: &Matrix, targets: &Targets, loss: LossKind, z: &[Matrix]) -> Result<Vec<Matrix>> {
    let norm = mlp
        .layers()
        .iter()
        .map(|l| l.weight().sum_squares())
        .sum::<f64>()
        .sqrt();
    let base = HESSIAN_RADIUS * (1.0 + norm);
    for r in [base, base * 1e-2] {
        let plus = shifted_grads(mlp, x, targets, loss, z, r)?;
        let minus = shifted_grads(mlp, x, targets, loss, z, -r)?;
        let est: Vec<Matrix> = plus
            .iter()
            .zip(&minus)
            .zip(z)
            .map(|((gp, gm), zl)| {
                Matrix::from_fn(gp.rows(), gp.cols(), |i, j| {
                    zl[(i, j)] * (gp[(i, j)] - gm[(i, j)]) / (2.0 * r)
                })
            })
            .collect();
        if est.iter().all(Matrix::is_finite) {
            return Ok(est);
        }
    }
    Err(Error::NonFinite("Hessian-vector product".into()))
}

fn shifted_grads(
    mlp: &Mlp,
    x: &Matrix,
    targets: &Targets,
    loss: LossKind,
    z: &[Matrix],
    r: f64,
) -> Result<Vec<Matrix>> {
    let mut shifted = mlp.clone();
    for (l, zl) in z.iter().enumerate() {
        shifted.apply_delta(l, &zl.scale(r));
    }
    let trace = shifted.forward(x)?;
    Ok(shifted.backward(&trace, targets, loss)?.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LayerRole, LayerSpec};

    fn scalar(w: f64) -> Mlp {
        let spec = [LayerSpec::new(1, 1, LayerRole::Hidden, true, true).unwrap()];
        Mlp::from_parts(&spec, vec![Matrix::filled(1, 1, w)], &[1.0], Activation::Identity).unwrap()
    }

    #[test]
    fn quadratic_loss_gives_exact_curvature() {
        // L(w) = ½(w·x − 0)² over one sample = ½ x² w², so H = x².
        let mlp = scalar(0.7);
        let x = Matrix::filled(1, 1, 1.5);
        let y = Targets::Dense(Matrix::zeros(1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = estimate_hessian_diag(&mlp, &x, &y, LossKind::Mse, &mut rng).unwrap();
        assert!((est[0][(0, 0)] - 2.25).abs() <= 1e-4 * 2.25);
    }

    #[test]
    fn sophia_refresh_is_an_ema() {
        let mlp = scalar(0.7);
        let hp = HyperParams {
            beta2: 0.5,
            ..HyperParams::default()
        };
        let mut st = OptState::new(OptimizerKind::Sophia, &mlp, &hp);
        let x = Matrix::filled(1, 1, 2.0);
        let y = Targets::Dense(Matrix::zeros(1, 1));
        refresh_hessian(&mlp, &x, &y, LossKind::Mse, &mut st, &hp).unwrap();
        refresh_hessian(&mlp, &x, &y, LossKind::Mse, &mut st, &hp).unwrap();
        let h = st.layers[0].h.as_ref().unwrap()[(0, 0)];
        assert!((h - 3.0).abs() < 1e-6);
        let mut adam = OptState::new(OptimizerKind::AdamW, &mlp, &hp);
        assert!(refresh_hessian(&mlp, &x, &y, LossKind::Mse, &mut adam, &hp).is_err());
    }
}
