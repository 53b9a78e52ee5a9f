//! Scalar special functions on top of `libm`.

use core::f64::consts::{PI, SQRT_2};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * z * z)
}

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    std_normal_pdf((x - mean) / std) / std
}

pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    std_normal_cdf((x - mean) / std)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `Gamma(a) / Gamma(b)` through log-gamma differences.
pub fn gamma_ratio(a: f64, b: f64) -> f64 {
    libm::exp(libm::lgamma(a) - libm::lgamma(b))
}

/// `2*pi`, spelled once.
pub const TAU: f64 = 2.0 * PI;

/// Rounds counts that are integral up to floating noise instead of bumping
/// them to the next integer, then takes the ceiling. Never returns 0.
pub fn ceil_count(x: f64) -> u64 {
    if !x.is_finite() || x >= u64::MAX as f64 {
        return u64::MAX;
    }
    let r = libm::round(x);
    let c = if libm::fabs(x - r) <= 1e-9 * r.abs().max(1.0) { r } else { libm::ceil(x) };
    (c as u64).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_values() {
        assert_abs_diff_eq!(std_normal_pdf(0.0), 0.398_942_280_4, epsilon = 1e-10);
        assert_abs_diff_eq!(std_normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(2.0 * std_normal_cdf(0.5) - 1.0, 0.382_924_922_5, epsilon = 1e-9);
        assert!(std_normal_pdf(40.0) < 1e-300);
    }

    #[test]
    fn gamma_ratio_matches_factorials() {
        // Gamma(4)/Gamma(6) = 3!/5! = 1/20
        assert_abs_diff_eq!(gamma_ratio(4.0, 6.0), 0.05, epsilon = 1e-14);
    }

    #[test]
    fn ceil_count_snaps() {
        assert_eq!(ceil_count(4096.000000000001), 4096);
        assert_eq!(ceil_count(5.0625), 6);
        assert_eq!(ceil_count(0.2), 1);
        assert_eq!(ceil_count(0.999_999_999_999), 1);
    }
}
