//! Error-function helpers used by the half-space kernels.

use statrs::function::erf;

pub fn erfc(x: f64) -> f64 {
    erf::erfc(x)
}

/// Scaled complementary error function `exp(x^2) * erfc(x)`.
///
/// Finite for all `x >= 0`; for negative `x` it grows like `2 exp(x^2)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 25.0 {
        erf::erfc(x) * (x * x).exp()
    } else {
        // Asymptotic series; at x >= 25 five terms are below 1e-16 relative.
        let inv2 = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..6 {
            term *= -((2 * n - 1) as f64) * inv2;
            sum += term;
        }
        sum / (x * std::f64::consts::PI.sqrt())
    }
}
