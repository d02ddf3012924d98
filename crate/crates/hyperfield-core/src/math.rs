//! Scalar float helpers backed by `libm`.
//!
//! Routing every transcendental through one place keeps results bit-identical
//! between `std` and `no_std` builds, which the determinism guarantees lean on.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Shifted softplus `ln(1 + exp(x - 1))`, the density activation.
///
/// Smooth and strictly positive, with asymptotes `x - 1` for large `x` and
/// `exp(x - 1)` for very negative `x`.
#[inline]
pub fn softplus_shifted(x: f64) -> f64 {
    let z = x - 1.0;
    if z > 30.0 {
        z
    } else if z < -30.0 {
        exp(z)
    } else {
        ln_1p(exp(z))
    }
}

/// Derivative of [`softplus_shifted`]: `sigmoid(x - 1)`.
#[inline]
pub fn softplus_shifted_deriv(x: f64) -> f64 {
    sigmoid(x - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry_point() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(5.0) + sigmoid(-5.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_shifted_positive_and_smooth() {
        for &x in &[-200.0, -5.0, 0.0, 1.0, 3.0, 200.0] {
            let y = softplus_shifted(x);
            assert!(y > 0.0, "softplus_shifted({x}) = {y} must be positive");
        }
        // Asymptotics.
        assert!((softplus_shifted(100.0) - 99.0).abs() < 1e-12);
        assert!(softplus_shifted(-100.0) < 1e-40);
        // Continuity across the branch points.
        for &z in &[30.0, -30.0] {
            let x = z + 1.0;
            let lo = softplus_shifted(x - 1e-9);
            let hi = softplus_shifted(x + 1e-9);
            assert!((lo - hi).abs() < 1e-8);
        }
    }
}
