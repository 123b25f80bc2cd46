use std::fmt;

use serde::{Deserialize, Serialize};

/// Relative slack used by every inequality check.
pub const REL_SLACK: f64 = 1e-9;

/// One inequality (or identity) instance: `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`; negative when violated.
    pub slack: f64,
    pub holds: bool,
}

impl BoundReport {
    /// `lhs ≤ rhs + tol·|rhs|`. An infinite RHS holds vacuously; NaN never holds.
    pub fn upper(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self::upper_tol(name, lhs, rhs, REL_SLACK)
    }

    pub fn upper_tol(name: impl Into<String>, lhs: f64, rhs: f64, rel_tol: f64) -> Self {
        let holds = if lhs.is_nan() || rhs.is_nan() {
            false
        } else if rhs == f64::INFINITY || lhs == f64::NEG_INFINITY {
            true
        } else {
            lhs <= rhs + rel_tol * rhs.abs()
        };
        Self {
            name: name.into(),
            lhs,
            rhs,
            slack: rhs - lhs,
            holds,
        }
    }

    /// Log-domain comparison with an additive tolerance, i.e. the same
    /// relative slack on the underlying positive quantities.
    pub fn upper_log(name: impl Into<String>, log_lhs: f64, log_rhs: f64) -> Self {
        let holds = if log_lhs.is_nan() || log_rhs.is_nan() {
            false
        } else if log_rhs == f64::INFINITY || log_lhs == f64::NEG_INFINITY {
            true
        } else {
            log_lhs <= log_rhs + REL_SLACK
        };
        Self {
            name: name.into(),
            lhs: log_lhs,
            rhs: log_rhs,
            slack: log_rhs - log_lhs,
            holds,
        }
    }

    /// `|lhs − rhs| ≤ rel_tol·max(|lhs|, |rhs|)`; `slack` carries the absolute gap.
    pub fn equality(name: impl Into<String>, lhs: f64, rhs: f64, rel_tol: f64) -> Self {
        let gap = (lhs - rhs).abs();
        let scale = lhs.abs().max(rhs.abs());
        Self {
            name: name.into(),
            lhs,
            rhs,
            slack: gap,
            holds: gap <= rel_tol * scale,
        }
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} lhs={:.12e} rhs={:.12e} slack={:.6e}",
            if self.holds { "HOLDS   " } else { "VIOLATED" },
            self.name,
            self.lhs,
            self.rhs,
            self.slack
        )
    }
}
