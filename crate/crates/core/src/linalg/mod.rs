//! Dense linear algebra for the optimizers and diagnostics.

mod eigen;
mod matrix;
mod newton_schulz;
mod norms;

pub use eigen::{matrix_fractional_power, sym_eig, EigenDecomposition, SYMMETRY_TOL};
pub use matrix::{gemm, Matrix};
pub use newton_schulz::{newton_schulz_orthogonalize, Orthogonalized, NS_TOL};
pub use norms::{
    frobenius_norm, numerical_rank, singular_values, spectral_norm, spectral_norm_default,
    SpectralEstimate, RANK_TOL, SPECTRAL_MAX_ITER, SPECTRAL_TOL,
};
