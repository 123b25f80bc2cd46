//! Dense linear algebra: SVD, symmetric eigenvalues, power iteration for
//! implicit operators, norms and log-domain pseudo-determinants.
//!
//! Everything is `f64` and allocation-based; matrices here are at most a few
//! thousand entries per side.

mod eig;
mod matrix;
mod norms;
mod power;
mod svd;

pub use eig::{gram_spectrum, sym_eig, Spectrum, GRAM_CLAMP_TOL};
pub use matrix::{dot, norm2, Matrix};
pub use norms::{log_pseudo_det_gram, vector_p_norm, UNDERFLOW_FLOOR};
pub use power::{spectral_norm_operator, LinearOperator, SpectralNormEstimate};
pub use svd::{singular_values, svd, SvdResult};
