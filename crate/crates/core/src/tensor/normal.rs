use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Above this standardized value the erfc path loses relative precision
/// and the asymptotic Mills-ratio series takes over.
const ASYMPTOTIC_SWITCH: f64 = 35.0;

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("sigma must be positive, got {sigma}")))
    }
}

pub fn standard_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// `log(1 - Phi(z))` for the standard normal, accurate in the far right tail.
pub fn standard_log_survival(z: f64) -> f64 {
    if z < ASYMPTOTIC_SWITCH {
        (0.5 * erfc(z / SQRT_2)).ln()
    } else {
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        standard_log_pdf(z) - z.ln() + series.ln()
    }
}

pub fn gaussian_pdf(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    Ok(gaussian_log_pdf(y, mu, sigma)?.exp())
}

pub fn gaussian_log_pdf(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(standard_log_pdf((y - mu) / sigma) - sigma.ln())
}

pub fn gaussian_cdf(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(0.5 * (1.0 + erf((y - mu) / (sigma * SQRT_2))))
}

pub fn log_survival(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(standard_log_survival((y - mu) / sigma))
}

/// Inverse CDF of the standard normal.
pub fn standard_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile level {p} outside (0, 1)")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_at_zero() {
        let p = gaussian_pdf(0.0, 0.0, 1.0).unwrap();
        assert!((p - 0.398_942_280_401_432_7).abs() < 1e-8);
    }

    #[test]
    fn cdf_symmetry() {
        assert!((gaussian_cdf(3.2, 3.2, 0.7).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_survival_far_tail() {
        // mpmath: log(erfc(8/sqrt(2))/2), log(erfc(40/sqrt(2))/2)
        let at8 = standard_log_survival(8.0);
        assert!((at8 - -35.013_437_159_914_55).abs() < 1e-9, "{at8}");
        let at40 = standard_log_survival(40.0);
        assert!((at40 - -804.608_442_013_753_8).abs() < 1e-8, "{at40}");
        let at8_scaled = log_survival(17.0, 1.0, 2.0).unwrap();
        assert!((at8_scaled - at8).abs() < 1e-12);
    }

    #[test]
    fn log_survival_is_continuous_at_switch() {
        let below = standard_log_survival(ASYMPTOTIC_SWITCH - 1e-9);
        let above = standard_log_survival(ASYMPTOTIC_SWITCH + 1e-9);
        assert!((below - above).abs() < 1e-6, "{below} {above}");
    }

    #[test]
    fn sigma_must_be_positive() {
        assert!(gaussian_pdf(0.0, 0.0, 0.0).is_err());
        assert!(gaussian_cdf(0.0, 0.0, -1.0).is_err());
        assert!(log_survival(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn quantile_of_095() {
        let z = standard_normal_quantile(0.95).unwrap();
        assert!((z - 1.644_853_626_951_472_2).abs() < 1e-9);
        assert!(standard_normal_quantile(1.0).is_err());
    }
}
