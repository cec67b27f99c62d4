use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};

/// Relative tolerance used by [`spectral_norm_default`].
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Iteration cap used by [`spectral_norm_default`].
pub const SPECTRAL_MAX_ITER: usize = 1000;
/// Relative singular-value floor separating genuine rank from round-off.
pub const RANK_TOL: f64 = 1e-12;

// Fixed so that every probe of the same matrix returns the same bits.
const POWER_ITERATION_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.sum_squares().sqrt()
}

/// Result of a power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate {
    /// Best estimate of the largest singular value.
    pub value: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out before the relative change fell below `tol`.
    pub converged: bool,
}

/// Largest singular value by power iteration on the smaller Gram matrix.
///
/// The start vector is drawn from a fixed-seed generator, so the estimate is a
/// pure function of `a`. The returned value is a lower bound that increases
/// monotonically with the iteration count.
pub fn spectral_norm(a: &Matrix, tol: f64, max_iter: usize) -> Result<SpectralEstimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidHyperParam(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidHyperParam("max_iter must be at least 1".into()));
    }
    if a.max_abs() == 0.0 {
        return Ok(SpectralEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    // Iterate in the smaller of the two spaces.
    let tall = a.rows() >= a.cols();
    let dim = if tall { a.cols() } else { a.rows() };
    let forward = |v: &[f64]| if tall { a.matvec(v) } else { a.t_matvec(v) };
    let backward = |w: &[f64]| if tall { a.t_matvec(w) } else { a.matvec(w) };

    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);

    let mut sigma = 0.0;
    for it in 1..=max_iter {
        let w = forward(&v);
        let next = norm2(&w);
        if next == 0.0 {
            // Start vector in the null space; fall back to a deterministic basis sweep.
            v = vec![0.0; dim];
            v[(it - 1) % dim] = 1.0;
            continue;
        }
        let converged = sigma > 0.0 && (next - sigma).abs() <= tol * next;
        sigma = sigma.max(next);
        if converged {
            return Ok(SpectralEstimate {
                value: sigma,
                iterations: it,
                converged: true,
            });
        }
        v = backward(&w);
        normalize(&mut v);
    }
    Ok(SpectralEstimate {
        value: sigma,
        iterations: max_iter,
        converged: false,
    })
}

/// [`spectral_norm`] with the crate defaults, returning only the value.
pub fn spectral_norm_default(a: &Matrix) -> f64 {
    spectral_norm(a, SPECTRAL_TOL, SPECTRAL_MAX_ITER)
        .expect("default tolerances are valid")
        .value
}

/// All singular values, descending, by one-sided Jacobi rotations.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    // Work on columns of the tall orientation.
    let src = if a.rows() >= a.cols() { a.clone() } else { a.transpose() };
    let n = src.cols();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| src.column(j)).collect();

    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Number of singular values above `rank_tol · σ_max`; zero for the zero matrix.
pub fn numerical_rank(a: &Matrix, rank_tol: f64) -> usize {
    let sv = singular_values(a);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > rank_tol * top).count(),
        _ => 0,
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
