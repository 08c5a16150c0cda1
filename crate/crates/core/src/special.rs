//! Gaussian distribution helpers.

use std::f64::consts::{PI, SQRT_2};


/// Standard normal distribution function Φ.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// P(|Z| < t) for a standard normal Z.
pub fn central_band_probability(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    libm::erf(t / SQRT_2)
}

/// P(|Z1| < a, |Z2| < b) for a standard bivariate normal with correlation `c`.
///
/// Conditions on Z1 and integrates the conditional band probability with
/// composite Simpson over [-a, a].
pub fn bivariate_box_probability(a: f64, b: f64, c: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let s = (1.0 - c * c).sqrt();
    if s == 0.0 {
        return central_band_probability(a.min(b));
    }
    let conditional = |z: f64| {
        normal_pdf(z) * (normal_cdf((b - c * z) / s) - normal_cdf((-b - c * z) / s))
    };
    let intervals = 4000;
    let h = 2.0 * a / intervals as f64;
    let mut acc = conditional(-a) + conditional(a);
    for i in 1..intervals {
        let z = -a + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * conditional(z);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_reference_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(-2.0), 0.022_750_131_948_179_2, max_relative = 1e-12);
        assert_relative_eq!(normal_cdf(1.0), 0.841_344_746_068_542_9, max_relative = 1e-12);
    }

    #[test]
    fn independent_box_factorizes() {
        let p = bivariate_box_probability(0.3, 0.7, 0.0);
        let q = central_band_probability(0.3) * central_band_probability(0.7);
        assert_relative_eq!(p, q, max_relative = 1e-10);
    }
}
