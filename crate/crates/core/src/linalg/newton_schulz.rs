use super::matrix::{gemm, Matrix};
use super::norms::frobenius_norm;
use crate::error::{Error, Result};

/// Default singular-value tolerance for orthogonalization.
pub const NS_TOL: f64 = 1e-3;

// Squared singular values below this (relative to the Frobenius-normalized
// input) are treated as null space by the convergence certificate.
const NULL_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Orthogonalized {
    pub matrix: Matrix,
    pub iterations: usize,
    /// Whether the certificate was reached within the iteration budget.
    pub converged: bool,
    /// `tr(M) - ‖M‖_F²` for the Gram matrix `M` of the returned iterate.
    pub residual: f64,
}

/// Approximates the polar factor `U Vᵀ` of `g` with the cubic Newton–Schulz
/// iteration `X ← 1.5 X − 0.5 X Xᵀ X`, starting from `g / ‖g‖_F`.
///
/// Starting below 1, every singular value stays in `[0, 1]`, so with `M` the
/// smaller Gram matrix each term of `tr(M) − ‖M‖_F² = Σ s²(1 − s²)` is
/// nonnegative. Stopping once that sum drops below `min(NULL_FLOOR, 2·tol)`
/// certifies that every singular value is either inside `[1 − tol, 1]` or
/// below `√NULL_FLOOR`.
pub fn newton_schulz_orthogonalize(g: &Matrix, iters: usize, tol: f64) -> Result<Orthogonalized> {
    if iters == 0 {
        return Err(Error::InvalidHyperParam("Newton–Schulz needs at least one iteration".into()));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidHyperParam(format!("tolerance must lie in (0, 1), got {tol}")));
    }
    let norm = frobenius_norm(g);
    if norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite("Newton–Schulz input".into()));
    }

    let wide = g.rows() <= g.cols();
    let threshold = NULL_FLOOR.min(2.0 * tol);
    let mut x = g.scale(1.0 / norm);
    let mut residual = f64::INFINITY;
    for it in 0..=iters {
        let gram = if wide { x.matmul_t(&x) } else { x.t_matmul(&x) };
        residual = gram.trace() - gram.sum_squares();
        if residual <= threshold {
            return Ok(Orthogonalized {
                matrix: x,
                iterations: it,
                converged: true,
                residual,
            });
        }
        if it == iters {
            break;
        }
        let correction = if wide {
            gemm(1.0, &gram, false, &x, false)
        } else {
            gemm(1.0, &x, false, &gram, false)
        };
        x.scale_in_place(1.5);
        x.axpy(-0.5, &correction);
    }
    Ok(Orthogonalized {
        matrix: x,
        iterations: iters,
        converged: false,
        residual,
    })
}
