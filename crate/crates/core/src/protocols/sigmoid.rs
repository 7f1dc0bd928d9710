//! Cubic polynomial stand-in for the logistic function.
//!
//! Homomorphic schemes only evaluate polynomials, so encrypted logistic
//! training replaces `1 / (1 + exp(-x))` with its degree-3 Taylor
//! expansion around zero. The polynomial is strictly increasing on
//! `[-2, 2]`, which makes it invertible there; the inverse is what lets
//! an attacker turn observed activation values back into raw scores.

use crate::error::{Error, Result};

/// Smallest value the approximation takes on its invertible domain,
/// attained at `x = -2`.
pub const POLY_SIGMOID_MIN: f64 = 1.0 / 6.0;

/// Largest value on the invertible domain, attained at `x = 2`.
pub const POLY_SIGMOID_MAX: f64 = 5.0 / 6.0;

/// Degree-3 approximation of the logistic function:
/// `0.5 + x/4 - x^3/48`.
pub fn poly_sigmoid(x: f64) -> f64 {
    0.5 + x / 4.0 - x * x * x / 48.0
}

/// Inverts [`poly_sigmoid`] on the monotone branch `x` in `[-2, 2]`.
///
/// Rearranging `y = 0.5 + x/4 - x^3/48` gives the depressed cubic
/// `x^3 - 12x + 48(y - 0.5) = 0`. For `y` within
/// `[POLY_SIGMOID_MIN, POLY_SIGMOID_MAX]` the cubic has three real roots
/// and the middle one is the branch we want; the trigonometric root
/// formula yields it directly as `4 cos(phi/3 - 2pi/3)` with
/// `phi = arccos(3(0.5 - y))`. Values outside the range cannot come from
/// the monotone branch and are rejected.
pub fn poly_sigmoid_inverse(y: f64) -> Result<f64> {
    let slack = 1e-12;
    if !y.is_finite() || y < POLY_SIGMOID_MIN - slack || y > POLY_SIGMOID_MAX + slack {
        return Err(Error::SigmoidRange {
            value: y,
            lo: POLY_SIGMOID_MIN,
            hi: POLY_SIGMOID_MAX,
        });
    }
    let arg = (3.0 * (0.5 - y)).clamp(-1.0, 1.0);
    let phi = arg.acos();
    let x = 4.0 * (phi / 3.0 - 2.0 * std::f64::consts::PI / 3.0).cos();
    Ok(x.clamp(-2.0, 2.0))
}
