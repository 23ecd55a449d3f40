//! Inverse-variance Gaussian fusion and iterative 3-sigma robust selection.
//!
//! The selection algorithm seeds a set with the minimum-variance estimate,
//! then alternates two steps until fixed point: fuse the set into a single
//! Gaussian `(mu, sigma^2)`, and admit every not-yet-selected estimate whose
//! value falls inside the open interval `(mu - 3*sigma, mu + 3*sigma)`. The
//! set only ever grows; estimates left outside at convergence are outliers.
//!
//! Known fragility, reproduced deliberately: if the minimum-claimed-variance
//! estimate is itself a confident outlier it anchors the set, and correct
//! values may be rejected. The evaluation harness measures this effect
//! rather than patching it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{DepthEstimate, DepthSource};

/// Inverse-variance weights: `w_i = (1/var_i) / sum_j (1/var_j)`.
pub fn fusion_weights(variances: &[f64]) -> Result<Vec<f64>> {
    if variances.is_empty() {
        return Err(Error::EmptyInput("fusion_weights"));
    }
    let mut inv = Vec::with_capacity(variances.len());
    for &v in variances {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidVariance(v));
        }
        inv.push(1.0 / v);
    }
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|w| w / total).collect())
}

/// Fuse Gaussian estimates into one: `mu = sum w_i mu_i`,
/// `var = sum w_i^2 var_i`.
///
/// The fused variance algebraically equals `(sum 1/var_i)^-1`, so it never
/// exceeds the smallest member variance, and the fused mean is a convex
/// combination of the member means.
pub fn fuse(means: &[f64], variances: &[f64]) -> Result<(f64, f64)> {
    if means.len() != variances.len() {
        return Err(Error::LengthMismatch {
            left: means.len(),
            right: variances.len(),
        });
    }
    let weights = fusion_weights(variances)?;
    let mu = weights.iter().zip(means).map(|(w, m)| w * m).sum();
    let var = weights
        .iter()
        .zip(variances)
        .map(|(w, v)| w * w * v)
        .sum();
    Ok((mu, var))
}

/// Outcome of the robust selection: the fused depth, the fused variance, the
/// accepted/rejected/invalid partition of the input sources, and the size of
/// the selected set after each iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub combined_depth: f64,
    pub combined_variance: f64,
    pub selected: Vec<DepthSource>,
    pub rejected: Vec<DepthSource>,
    pub invalid: Vec<DepthSource>,
    pub iterations: usize,
    /// Selected-set size after each iteration's admissions; monotone
    /// non-decreasing, with `iteration_sizes.len() == iterations`.
    pub iteration_sizes: Vec<usize>,
}

/// Run the iterative 3-sigma selection over the valid estimates and fuse the
/// survivors.
///
/// Ties for the minimum-variance initializer break toward the lowest source
/// index, and set membership is accumulated in source-index order, so the
/// result is independent of the input ordering. Fails when no estimate is
/// valid.
pub fn select_and_combine(estimates: &[DepthEstimate]) -> Result<FusionResult> {
    let mut valid: Vec<&DepthEstimate> = estimates.iter().filter(|e| e.valid).collect();
    let invalid: Vec<DepthSource> = estimates
        .iter()
        .filter(|e| !e.valid)
        .map(|e| e.source)
        .collect();
    if valid.is_empty() {
        return Err(Error::NoUsableDepth);
    }
    // Canonical order makes float accumulation permutation-invariant.
    valid.sort_by(|a, b| {
        a.source
            .index()
            .cmp(&b.source.index())
            .then(a.value.total_cmp(&b.value))
            .then(a.sigma.total_cmp(&b.sigma))
    });

    let anchor = valid
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (a.sigma * a.sigma).total_cmp(&(b.sigma * b.sigma)))
        .map(|(i, _)| i)
        .expect("non-empty");

    let mut in_set = vec![false; valid.len()];
    in_set[anchor] = true;

    let mut mu;
    let mut var;
    let mut iterations = 0;
    let mut iteration_sizes = Vec::new();
    loop {
        iterations += 1;
        let (means, vars): (Vec<f64>, Vec<f64>) = valid
            .iter()
            .zip(&in_set)
            .filter(|(_, &m)| m)
            .map(|(e, _)| (e.value, e.sigma * e.sigma))
            .unzip();
        (mu, var) = fuse(&means, &vars)?;
        let band = 3.0 * var.sqrt();

        let mut added = false;
        for (i, e) in valid.iter().enumerate() {
            if !in_set[i] && e.value > mu - band && e.value < mu + band {
                in_set[i] = true;
                added = true;
            }
        }
        iteration_sizes.push(in_set.iter().filter(|&&m| m).count());
        if !added {
            break;
        }
    }

    let selected = valid
        .iter()
        .zip(&in_set)
        .filter(|(_, &m)| m)
        .map(|(e, _)| e.source)
        .collect();
    let rejected = valid
        .iter()
        .zip(&in_set)
        .filter(|(_, &m)| !m)
        .map(|(e, _)| e.source)
        .collect();
    Ok(FusionResult {
        combined_depth: mu,
        combined_variance: var,
        selected,
        rejected,
        invalid,
        iterations,
        iteration_sizes,
    })
}
