//! Gaussian negative log-likelihood of model d' predictions against
//! reference (human) values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One reference d' measurement with its standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub label: String,
    pub human_dprime: f64,
    pub stderr: f64,
}

/// `-log[ N(model; human, stderr^2) ]`.
pub fn neg_log_likelihood(reference: &ReferencePoint, model_dprime: f64) -> Result<f64> {
    if reference.stderr <= 0.0 {
        return Err(Error::invalid(format!(
            "stderr must be positive, got {}",
            reference.stderr
        )));
    }
    let var = reference.stderr * reference.stderr;
    let resid = reference.human_dprime - model_dprime;
    Ok(0.5 * (2.0 * std::f64::consts::PI * var).ln() + resid * resid / (2.0 * var))
}

/// Summed NLL over paired (reference, prediction) points.
pub fn total_neg_log_likelihood(pairs: &[(ReferencePoint, f64)]) -> Result<f64> {
    pairs
        .iter()
        .map(|(r, m)| neg_log_likelihood(r, *m))
        .sum()
}
