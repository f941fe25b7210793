use serde::{Deserialize, Serialize};

use super::TriangulationError;

/// Affine correction `reference ≈ scale · estimated + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDepthFit {
    pub scale: f64,
    pub shift: f64,
    pub residual_rms: f64,
}

impl AffineDepthFit {
    pub fn apply(&self, estimated: f64) -> f64 {
        self.scale * estimated + self.shift
    }
}

/// Closed-form least-squares scale/shift mapping estimated depths onto
/// reference depths.
pub fn calibrate_depth_affine(estimated: &[f64], reference: &[f64]) -> Result<AffineDepthFit, TriangulationError> {
    if estimated.len() != reference.len() || estimated.len() < 2 {
        return Err(TriangulationError::InvalidConfig(format!(
            "need two equally sized lists of at least 2 depths (got {} and {})",
            estimated.len(),
            reference.len()
        )));
    }
    let n = estimated.len() as f64;
    let mean_d = estimated.iter().sum::<f64>() / n;
    let mean_z = reference.iter().sum::<f64>() / n;
    let var_d = estimated.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / n;
    if var_d < 1e-12 {
        return Err(TriangulationError::DegenerateFit(var_d));
    }
    let cov = estimated
        .iter()
        .zip(reference)
        .map(|(d, z)| (d - mean_d) * (z - mean_z))
        .sum::<f64>()
        / n;
    let scale = cov / var_d;
    let shift = mean_z - scale * mean_d;
    let sse: f64 = estimated
        .iter()
        .zip(reference)
        .map(|(d, z)| (scale * d + shift - z).powi(2))
        .sum();
    Ok(AffineDepthFit {
        scale,
        shift,
        residual_rms: (sse / n).sqrt(),
    })
}
