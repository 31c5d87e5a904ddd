use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::LossCurve;

pub const MIN_EPOCHS: usize = 10;
/// Epochs averaged at each end of the curve.
pub const WINDOW: usize = 5;
pub const ABSOLUTE_BOUND: f64 = 0.05;
pub const RELATIVE_BOUND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    Converged,
    NotConverged,
}

/// Converged iff the mean of the last five epochs is at most
/// `max(0.05, 0.05 * mean of the first five)`; the bound is inclusive.
pub fn assess_convergence(curve: &LossCurve) -> Result<Convergence> {
    let values = curve.values();
    if values.len() < MIN_EPOCHS {
        return Err(Error::CurveTooShort(values.len()));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let head = mean(&values[..WINDOW]);
    let tail = mean(&values[values.len() - WINDOW..]);
    let bound = ABSOLUTE_BOUND.max(RELATIVE_BOUND * head);
    if tail <= bound * (1.0 + 1e-12) {
        Ok(Convergence::Converged)
    } else {
        Ok(Convergence::NotConverged)
    }
}
