use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Result, RkmError};

/// `P(X ≤ x)` for `X ~ χ²(dof)`, via the regularized lower incomplete gamma function.
pub fn chi2_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(dof as f64 / 2.0, x / 2.0)
}

fn chi2_pdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof as f64 / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// Quantile of the χ² distribution: the `q` with `chi2_cdf(dof, q) = p`.
///
/// Newton steps on the CDF, safeguarded by a bisection bracket.
pub fn chi2_quantile(dof: usize, p: f64) -> Result<f64> {
    if dof == 0 {
        return Err(RkmError::InvalidArgument("chi2 degrees of freedom must be >= 1".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(RkmError::InvalidArgument(format!("chi2 probability must lie in (0, 1), got {p}")));
    }
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0) * 2.0;
    while chi2_cdf(dof, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(dof, q) - p;
        if f.abs() < 1e-15 {
            break;
        }
        if f < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        let dens = chi2_pdf(dof, q);
        let newton = if dens > 0.0 { q - f / dens } else { f64::NAN };
        q = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(q)
}
