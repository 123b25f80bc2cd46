use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gram_spectrum;
use crate::net::JacobianBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalDim {
    /// Mean participation ratio over samples with a nonzero Jacobian; NaN if none.
    pub mean: f64,
    /// Samples with an all-zero Jacobian.
    pub missing: usize,
}

/// `(Σλ)²/Σλ²` over the eigenvalues of `J Jᵀ`; `None` for a zero Jacobian.
pub fn participation_ratio(j: &crate::linalg::Matrix) -> Result<Option<f64>> {
    let spec = gram_spectrum(j)?;
    let sq = spec.sum_sq();
    if sq == 0.0 {
        return Ok(None);
    }
    Ok(Some(spec.sum().powi(2) / sq))
}

pub fn local_dimensionality(bundles: &[JacobianBundle]) -> Result<LocalDim> {
    if bundles.is_empty() {
        return Err(Error::EmptySamples("local_dimensionality".into()));
    }
    let mut total = 0.0;
    let mut present = 0usize;
    for b in bundles {
        if let Some(pr) = participation_ratio(&b.j_input)? {
            total += pr;
            present += 1;
        }
    }
    Ok(LocalDim {
        mean: if present == 0 { f64::NAN } else { total / present as f64 },
        missing: bundles.len() - present,
    })
}
