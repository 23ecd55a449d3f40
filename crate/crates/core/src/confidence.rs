//! Uncertainty losses and the variance-based 3D geometry confidence model.
//!
//! The loss `|p - p*| / sigma + ln(sigma)` is minimized over sigma exactly at
//! the error magnitude, which is what lets a regressor learn its own
//! uncertainty without ground-truth variances. Here the losses are evaluable
//! functions only; no training happens in this crate.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::fusion_weights;

/// Norm used for the per-vertex distance in [`box_uncertainty_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexNorm {
    /// Sum of absolute coordinate differences (the default reading).
    L1,
    /// Euclidean distance, for sensitivity experiments.
    L2,
}

impl VertexNorm {
    fn distance(self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        let d = a - b;
        match self {
            VertexNorm::L1 => d.x.abs() + d.y.abs() + d.z.abs(),
            VertexNorm::L2 => d.norm(),
        }
    }
}

/// Scalar uncertainty loss: `|p - p_star| / sigma + ln(sigma)`.
pub fn uncertainty_loss(p: f64, p_star: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidSigma(sigma));
    }
    Ok((p - p_star).abs() / sigma + sigma.ln())
}

/// Box-vertex uncertainty loss: the summed per-vertex distance over the 8
/// vertices, divided by `sigma_b`, plus `ln(sigma_b)`.
pub fn box_uncertainty_loss(
    vertices: &[Vector3<f64>; 8],
    gt: &[Vector3<f64>; 8],
    sigma_b: f64,
    norm: VertexNorm,
) -> Result<f64> {
    if !(sigma_b > 0.0) {
        return Err(Error::InvalidSigma(sigma_b));
    }
    let total: f64 = vertices
        .iter()
        .zip(gt)
        .map(|(v, g)| norm.distance(v, g))
        .sum();
    Ok(total / sigma_b + sigma_b.ln())
}

/// Confidence of an estimate with variance `sigma_sq`:
/// `d = 1 - min(sigma_sq, 1)`.
pub fn confidence_from_variance(sigma_sq: f64) -> Result<f64> {
    if sigma_sq < 0.0 {
        return Err(Error::InvalidVariance(sigma_sq));
    }
    Ok(1.0 - sigma_sq.min(1.0))
}

/// Conditional 3D confidence: the inverse-variance-weighted blend of the
/// combined-depth confidence and the box confidence.
pub fn conditional_3d_confidence(sigma_c_sq: f64, sigma_b_sq: f64) -> Result<f64> {
    let weights = fusion_weights(&[sigma_c_sq, sigma_b_sq])?;
    let d_c = confidence_from_variance(sigma_c_sq)?;
    let d_b = confidence_from_variance(sigma_b_sq)?;
    Ok(weights[0] * d_c + weights[1] * d_b)
}

/// Final detection confidence: `p_3d_given_2d * p_2d`, both in `[0, 1]`.
pub fn detection_confidence(p_3d_given_2d: f64, p_2d: f64) -> Result<f64> {
    for (name, v) in [("p_3d_given_2d", p_3d_given_2d), ("p_2d", p_2d)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("{name} = {v} not in [0, 1]")));
        }
    }
    Ok(p_3d_given_2d * p_2d)
}

/// All intermediate confidence terms for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBreakdown {
    pub d_c: f64,
    pub d_b: f64,
    pub p_3d_given_2d: f64,
    pub p_2d: f64,
    pub p_m: f64,
}

/// Assemble the full confidence breakdown from the two variances and the
/// 2D heatmap score.
pub fn breakdown(sigma_c_sq: f64, sigma_b_sq: f64, p_2d: f64) -> Result<ConfidenceBreakdown> {
    let d_c = confidence_from_variance(sigma_c_sq)?;
    let d_b = confidence_from_variance(sigma_b_sq)?;
    let p_3d_given_2d = conditional_3d_confidence(sigma_c_sq, sigma_b_sq)?;
    let p_m = detection_confidence(p_3d_given_2d, p_2d)?;
    Ok(ConfidenceBreakdown {
        d_c,
        d_b,
        p_3d_given_2d,
        p_2d,
        p_m,
    })
}
