//! Robust reweighting of latent variables.
//!
//! Latent points are scored with squared Mahalanobis distances against a
//! FAST-MCD estimate of location and scatter. Points inside the χ² cutoff keep
//! weight 1; the rest are down-weighted to [`OUTLIER_WEIGHT`]. The down-weight
//! is strictly positive so the weighting matrix stays positive definite.

mod chi2;
mod mcd;

pub use chi2::{chi2_cdf, chi2_quantile};
pub use mcd::{
    consistency_factor, fast_mcd, fast_mcd_traced, mahalanobis_sq, min_subset_size, subset_mean_cov, McdEstimate,
    RestartTrace, DEFAULT_RESTARTS, KEEP_BEST,
};

use nalgebra::DMatrix;

use crate::error::{Result, RkmError};

pub const OUTLIER_WEIGHT: f64 = 1e-4;
pub const DEFAULT_ALPHA: f64 = 0.975;
pub const DEFAULT_MCD_FRACTION: f64 = 0.75;

/// Diagonal of the weighting matrix and the distances/cutoff that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub distances_sq: Vec<f64>,
    pub threshold: f64,
    pub alpha: f64,
    pub n_mcd: usize,
}

impl WeightVector {
    /// All-ones weights (no reweighting has happened yet).
    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0; n], distances_sq: vec![0.0; n], threshold: f64::INFINITY, alpha: 1.0, n_mcd: n }
    }

    /// Thresholds precomputed squared distances at `threshold`.
    pub fn from_distances(distances_sq: Vec<f64>, threshold: f64, alpha: f64, n_mcd: usize) -> Self {
        let weights = distances_sq.iter().map(|&d| if d <= threshold { 1.0 } else { OUTLIER_WEIGHT }).collect();
        Self { weights, distances_sq, threshold, alpha, n_mcd }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn downweighted(&self) -> Vec<usize> {
        self.weights.iter().enumerate().filter(|(_, &w)| w < 1.0).map(|(i, _)| i).collect()
    }

    pub fn fraction_downweighted(&self) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        self.downweighted().len() as f64 / self.weights.len() as f64
    }

    /// Order-sensitive FNV-1a hash of the weight bits, used to detect changes
    /// of the weighting between epochs.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in &self.weights {
            for b in w.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// MCD-based weights for the latent points (rows of `points`, N×s).
///
/// Runs FAST-MCD with `n_mcd = ⌊N·n_mcd_fraction⌋`, scores every point with
/// the consistency-corrected covariance, and applies the `χ²_{s,α}` cutoff.
pub fn compute_weights(points: &DMatrix<f64>, alpha: f64, n_mcd_fraction: f64, seed: u64) -> Result<WeightVector> {
    compute_weights_with(points, alpha, n_mcd_fraction, DEFAULT_RESTARTS, seed)
}

pub fn compute_weights_with(
    points: &DMatrix<f64>,
    alpha: f64,
    n_mcd_fraction: f64,
    restarts: usize,
    seed: u64,
) -> Result<WeightVector> {
    if !(0.5..=1.0).contains(&n_mcd_fraction) {
        return Err(RkmError::InvalidArgument(format!("MCD fraction must lie in [0.5, 1], got {n_mcd_fraction}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RkmError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (n, s) = points.shape();
    let n_mcd = (n as f64 * n_mcd_fraction).floor() as usize;
    let est = fast_mcd(points, n_mcd, restarts, seed)?;
    let d2 = mahalanobis_sq(points, &est.mean, &est.cov)?;
    let threshold = chi2_quantile(s, alpha)?;
    Ok(WeightVector::from_distances(d2, threshold, alpha, n_mcd))
}
