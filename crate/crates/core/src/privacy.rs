//! Balanced-accuracy ceilings for attackers facing ε-DP recourse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::exp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpBound {
    pub epsilon: f64,
    /// `1/2 + (1 - e^-ε) / 2`.
    pub ba_bound: f64,
    /// `1/2 + (2 - e^-ε)(1 - e^-ε) / 4`.
    pub refined_ba_bound: f64,
}

pub fn dp_ba_bound(epsilon: f64) -> Result<DpBound> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::NegativeEpsilon(epsilon));
    }
    let t = exp(-epsilon);
    Ok(DpBound { epsilon, ba_bound: 0.5 + (1.0 - t) / 2.0, refined_ba_bound: 0.5 + (2.0 - t) * (1.0 - t) / 4.0 })
}
