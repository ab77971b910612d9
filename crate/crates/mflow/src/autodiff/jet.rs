//! Truncated second-order Taylor scalars ("2-jets") along one direction.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::Real;
use crate::{Error, Result};

/// Value plus first and second directional derivative along one input
/// direction. Arithmetic propagates all three per the chain rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2<T> {
    pub v: T,
    pub d1: T,
    pub d2: T,
}

impl<T: Real> Jet2<T> {
    /// A value that does not vary along the active direction.
    pub fn constant(v: T) -> Self {
        Jet2 {
            v,
            d1: v.lift(0.0),
            d2: v.lift(0.0),
        }
    }

    /// The active input itself: unit first derivative, zero curvature.
    pub fn variable(v: T) -> Self {
        Jet2 {
            v,
            d1: v.lift(1.0),
            d2: v.lift(0.0),
        }
    }

    /// Affine combination `a*self + b*rhs + c` in one step.
    pub fn affine(self, a: f64, rhs: Jet2<T>, b: f64, c: f64) -> Self {
        let (ca, cb) = (self.v.lift(a), self.v.lift(b));
        Jet2 {
            v: ca * self.v + cb * rhs.v + self.v.lift(c),
            d1: ca * self.d1 + cb * rhs.d1,
            d2: ca * self.d2 + cb * rhs.d2,
        }
    }

    pub fn scale(self, a: f64) -> Self {
        let c = self.v.lift(a);
        Jet2 {
            v: c * self.v,
            d1: c * self.d1,
            d2: c * self.d2,
        }
    }

    /// GELU through the jet: with `g(u) = u Phi(u)`,
    /// `g'(u) = Phi(u) + u phi(u)` and `g''(u) = (2 - u^2) phi(u)`.
    pub fn gelu(self) -> Self {
        let cdf = self.v.gauss_cdf();
        let pdf = self.v.gauss_pdf();
        let g1 = cdf + self.v * pdf;
        let g2 = pdf + pdf - self.v * self.v * pdf;
        Jet2 {
            v: self.v * cdf,
            d1: g1 * self.d1,
            d2: g2 * self.d1 * self.d1 + g1 * self.d2,
        }
    }

    /// Division that surfaces a zero denominator as an error instead of Inf.
    pub fn try_div(self, rhs: Jet2<T>) -> Result<Self> {
        if rhs.v.value() == 0.0 {
            return Err(Error::Numerical("jet division by zero".to_string()));
        }
        Ok(self / rhs)
    }
}

impl<T: Real> Add for Jet2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Jet2 {
            v: self.v + rhs.v,
            d1: self.d1 + rhs.d1,
            d2: self.d2 + rhs.d2,
        }
    }
}

impl<T: Real> Sub for Jet2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Jet2 {
            v: self.v - rhs.v,
            d1: self.d1 - rhs.d1,
            d2: self.d2 - rhs.d2,
        }
    }
}

impl<T: Real> Neg for Jet2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Jet2 {
            v: -self.v,
            d1: -self.d1,
            d2: -self.d2,
        }
    }
}

impl<T: Real> Mul for Jet2<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Jet2 {
            v: self.v * rhs.v,
            d1: self.d1 * rhs.v + self.v * rhs.d1,
            // (fg)'' = f'' g + 2 f' g' + f g''
            d2: self.d2 * rhs.v + self.d1 * rhs.d1 + self.d1 * rhs.d1 + self.v * rhs.d2,
        }
    }
}

impl<T: Real> Div for Jet2<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        // q = f/g: q' = (f' - q g') / g, q'' = (f'' - 2 q' g' - q g'') / g.
        let q = self.v / rhs.v;
        let q1 = (self.d1 - q * rhs.d1) / rhs.v;
        let q2 = (self.d2 - q1 * rhs.d1 - q1 * rhs.d1 - q * rhs.d2) / rhs.v;
        Jet2 { v: q, d1: q1, d2: q2 }
    }
}

/// Evaluates `f` twice with unit directions along x and y and returns the
/// sum of second derivatives, i.e. the Laplacian at `(x, y)`.
pub fn laplacian<T: Real>(
    mut f: impl FnMut(Jet2<T>, Jet2<T>) -> Jet2<T>,
    x: T,
    y: T,
) -> T {
    let along_x = f(Jet2::variable(x), Jet2::constant(y));
    let along_y = f(Jet2::constant(x), Jet2::variable(y));
    along_x.d2 + along_y.d2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::real::{phi_cdf, phi_pdf};
    use proptest::prelude::*;

    fn jet(v: f64) -> Jet2<f64> {
        Jet2::variable(v)
    }

    #[test]
    fn gelu_at_zero() {
        let g = jet(0.0).gelu();
        assert_eq!(g.v, 0.0);
        assert_eq!(g.d1, 0.5);
        let expect = 2.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((g.d2 - expect).abs() < 1e-15, "{} vs {expect}", g.d2);
    }

    #[test]
    fn square_has_closed_form() {
        let x = jet(3.0);
        let y = x * x;
        assert_eq!((y.v, y.d1, y.d2), (9.0, 6.0, 2.0));
    }

    fn central_diffs(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
        let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
        let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        (d1, d2)
    }

    #[test]
    fn gelu_of_square_matches_finite_differences() {
        let x = 0.7;
        let g = (jet(x) * jet(x)).gelu();
        let f = |x: f64| {
            let u = x * x;
            u * phi_cdf(u)
        };
        let (fd1, fd2) = central_diffs(f, x, 1e-4);
        assert!((g.d1 - fd1).abs() / fd1.abs() <= 1e-6);
        assert!((g.d2 - fd2).abs() / fd2.abs() <= 1e-6);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let a = jet(1.0);
        let b = Jet2::constant(0.0);
        assert!(a.try_div(b).is_err());
        assert!(a.try_div(jet(2.0)).is_ok());
    }

    #[test]
    fn division_chain_rule() {
        // f(x) = (x^2 + 1) / (x + 2) at x = 1.3.
        let x = 1.3;
        let j = jet(x);
        let one = Jet2::constant(1.0);
        let two = Jet2::constant(2.0);
        let f = (j * j + one) / (j + two);
        let (fd1, fd2) = central_diffs(|x| (x * x + 1.0) / (x + 2.0), x, 1e-5);
        assert!((f.d1 - fd1).abs() <= 1e-8);
        assert!((f.d2 - fd2).abs() <= 1e-5);
    }

    #[test]
    fn laplacian_of_harmonic_saddle_is_zero() {
        let f = |x: Jet2<f64>, y: Jet2<f64>| x * x - y * y;
        for (px, py) in [(0.0, 0.0), (0.3, -1.2), (5.0, 2.0)] {
            assert!(laplacian(f, px, py).abs() < 1e-14);
        }
    }

    #[test]
    fn laplacian_of_paraboloid_is_four() {
        let f = |x: Jet2<f64>, y: Jet2<f64>| x * x + y * y;
        assert!((laplacian(f, 0.8, -0.1) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn gelu_matches_finite_differences_on_a_grid() {
        for k in -8..=8 {
            let x = k as f64 * 0.5;
            let g = jet(x).gelu();
            let (fd1, fd2) = central_diffs(|x| x * phi_cdf(x), x, 1e-5);
            assert!((g.d1 - fd1).abs() < 1e-8, "d1 at {x}");
            assert!((g.d2 - fd2).abs() < 2e-5, "d2 at {x}: {} vs {fd2}", g.d2);
            // Analytic second derivative cross-check.
            assert!((g.d2 - (2.0 - x * x) * phi_pdf(x)).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn quadratics_are_exact(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            c in -3.0f64..3.0,
            x in -5.0f64..5.0,
        ) {
            // p(x) = a + b x + c x^2 evaluated via jet arithmetic must carry
            // exact derivatives up to rounding.
            let j = jet(x);
            let p = Jet2::constant(a) + j.scale(b) + (j * j).scale(c);
            prop_assert!((p.v - (a + b * x + c * x * x)).abs() < 1e-12);
            prop_assert!((p.d1 - (b + 2.0 * c * x)).abs() < 1e-12);
            prop_assert!((p.d2 - 2.0 * c).abs() < 1e-12);
        }

        #[test]
        fn product_of_linears_is_exact(
            p in -2.0f64..2.0,
            q in -2.0f64..2.0,
            x in -4.0f64..4.0,
        ) {
            // (x + p)(x + q): d1 = 2x + p + q, d2 = 2.
            let f = (jet(x) + Jet2::constant(p)) * (jet(x) + Jet2::constant(q));
            prop_assert!((f.d1 - (2.0 * x + p + q)).abs() < 1e-12);
            prop_assert!((f.d2 - 2.0).abs() < 1e-12);
        }
    }
}
