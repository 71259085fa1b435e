use serde::{Deserialize, Serialize};

/// Numerical knobs shared by every decision routine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Eigenvalue clustering distance, relative to the operator norm.
    pub eig: f64,
    /// Singular values below `rank * sigma_max` count as zero.
    pub rank: f64,
    /// Accepted relative reconstruction error of a real Jordan decomposition.
    pub jordan: f64,
    /// Largest accepted condition number of a Jordan basis.
    pub cond_cap: f64,
    /// Relative tolerance of the normal-form verdicts.
    pub verdict: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eig: 1e-6,
            rank: 1e-8,
            jordan: 1e-8,
            cond_cap: 1e8,
            verdict: 1e-7,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [
            self.eig,
            self.rank,
            self.jordan,
            self.cond_cap,
            self.verdict,
        ];
        if all.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(())
        } else {
            Err(crate::Error::InvalidInput(
                "tolerances must be positive and finite".into(),
            ))
        }
    }
}
