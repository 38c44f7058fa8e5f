//! Central and noncentral χ² distribution functions.

use crate::dist::{invert_monotone, reg_lower_incomplete_gamma};
use crate::error::{Error, Result};

fn check_dof(dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Domain("chi-squared needs at least one degree of freedom".into()));
    }
    Ok(dof as f64)
}

fn check_x(x: f64) -> Result<()> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("chi-squared argument must be >= 0, got {x}")));
    }
    Ok(())
}

/// `F_d(x) = P(d/2, x/2)`.
pub fn chi2_cdf(x: f64, dof: usize) -> Result<f64> {
    let k = check_dof(dof)?;
    check_x(x)?;
    Ok(reg_lower_incomplete_gamma(k / 2.0, x / 2.0)?.value)
}

/// Upper tail `1 − F_d(x)` without cancellation.
pub fn chi2_sf(x: f64, dof: usize) -> Result<f64> {
    let k = check_dof(dof)?;
    check_x(x)?;
    Ok(reg_lower_incomplete_gamma(k / 2.0, x / 2.0)?.complement)
}

/// Inverse of [`chi2_cdf`] for `q ∈ (0, 1)`.
pub fn chi2_quantile(q: f64, dof: usize) -> Result<f64> {
    check_dof(dof)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    invert_monotone(|x| chi2_cdf(x, dof), q, 1e-300, 1e-15)
}

/// Noncentral χ² cdf `F_{d,δ²}(x)` as a Poisson mixture of central cdfs,
/// truncated once the remaining Poisson mass is below `1e-12`.
pub fn noncentral_chi2_cdf(x: f64, dof: usize, delta2: f64) -> Result<f64> {
    check_dof(dof)?;
    check_x(x)?;
    if !(delta2 >= 0.0 && delta2.is_finite()) {
        return Err(Error::Domain(format!("noncentrality must be >= 0, got {delta2}")));
    }
    if delta2 == 0.0 {
        return chi2_cdf(x, dof);
    }
    let half = delta2 / 2.0;
    let mut log_w = -half;
    let mut mass = 0.0;
    let mut total = 0.0;
    let mut k = 0usize;
    loop {
        let w = log_w.exp();
        mass += w;
        total += w * chi2_cdf(x, dof + 2 * k)?;
        if (1.0 - mass) < 1e-12 && k as f64 > half {
            break;
        }
        k += 1;
        if k > 100_000 {
            break;
        }
        log_w += half.ln() - (k as f64).ln();
    }
    Ok(total.clamp(0.0, 1.0))
}
