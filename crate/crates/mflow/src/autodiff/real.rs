//! Scalar abstraction shared by the jet and tape arithmetic.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// A differentiable scalar: plain `f64` or a tape variable.
///
/// `lift` injects a constant "next to" an existing value so tape-backed
/// scalars can mint constants on their own tape.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Constant with the same backing context as `self`.
    fn lift(self, c: f64) -> Self;

    /// Primal value (used for diagnostics and zero checks).
    fn value(self) -> f64;

    /// Standard normal CDF.
    fn gauss_cdf(self) -> Self;

    /// Standard normal density.
    fn gauss_pdf(self) -> Self;

    /// Exact GELU: `x * Phi(x)` with the Gaussian CDF, not the tanh
    /// approximation.
    fn gelu(self) -> Self {
        self * self.gauss_cdf()
    }
}

pub(crate) const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
pub(crate) const INV_SQRT_2PI: f64 = 0.3989422804014327;

pub(crate) fn phi_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2))
}

pub(crate) fn phi_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

impl Real for f64 {
    fn lift(self, c: f64) -> Self {
        c
    }

    fn value(self) -> f64 {
        self
    }

    fn gauss_cdf(self) -> Self {
        phi_cdf(self)
    }

    fn gauss_pdf(self) -> Self {
        phi_pdf(self)
    }
}
