//! Reverse-mode tape over parameter-dependent scalars.
//!
//! Operations push nodes in evaluation order, so one reverse sweep over the
//! node list visits every node exactly once in reverse topological order.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{phi_cdf, phi_pdf, Real};
use crate::{Error, Result};

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    weights: [f64; 2],
}

/// Wengert list; one per worker, never shared across threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A scalar recorded on a tape. Cheap to copy; arithmetic records new nodes.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates a leaf variable (a parameter or input).
    pub fn var(&self, val: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [0, 0],
            weights: [0.0, 0.0],
        });
        Var { tape: self, idx, val }
    }

    fn push(&self, mut node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        // Leaves reference themselves with zero weight.
        if node.weights == [0.0, 0.0] && node.parents == [0, 0] {
            node.parents = [idx, idx];
        }
        nodes.push(node);
        idx
    }

    /// Reverse sweep from `loss`; returns the adjoint of every node.
    pub fn grad(&self, loss: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[loss.idx as usize] = 1.0;
        for i in (0..=loss.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k] as usize;
                if p != i {
                    adj[p] += node.weights[k] * a;
                }
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.val
    }

    pub fn index(self) -> usize {
        self.idx as usize
    }

    fn unary(self, val: f64, dv: f64) -> Var<'t> {
        let idx = self.tape.push(Node {
            parents: [self.idx, self.idx],
            weights: [dv, 0.0],
        });
        Var { tape: self.tape, idx, val }
    }

    fn binary(self, rhs: Var<'t>, val: f64, da: f64, db: f64) -> Var<'t> {
        let idx = self.tape.push(Node {
            parents: [self.idx, rhs.idx],
            weights: [da, db],
        });
        Var { tape: self.tape, idx, val }
    }

    /// Division surfacing a zero denominator as an error.
    pub fn try_div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        if rhs.val == 0.0 {
            return Err(Error::Numerical("tape division by zero".to_string()));
        }
        Ok(self / rhs)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        debug_assert!(rhs.val != 0.0, "tape division by zero");
        let inv = 1.0 / rhs.val;
        self.binary(rhs, self.val * inv, inv, -self.val * inv * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Real for Var<'t> {
    fn lift(self, c: f64) -> Self {
        self.tape.var(c)
    }

    fn value(self) -> f64 {
        self.val
    }

    fn gauss_cdf(self) -> Self {
        self.unary(phi_cdf(self.val), phi_pdf(self.val))
    }

    fn gauss_pdf(self) -> Self {
        let pdf = phi_pdf(self.val);
        self.unary(pdf, -self.val * pdf)
    }
}

/// Builds a loss over a fresh tape with the given leaf parameters and
/// returns `(loss value, d loss / d params)`. Parameters the loss never
/// touches get zero gradient.
pub fn grad_params<F>(params: &[f64], build: F) -> (f64, Vec<f64>)
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.var(*p)).collect();
    let loss = build(&tape, &vars);
    let adj = tape.grad(loss);
    let grad = vars.iter().map(|v| adj[v.index()]).collect();
    (loss.value(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::jet::{laplacian, Jet2};

    #[test]
    fn linear_regression_gradient() {
        // loss = (w x - y)^2 with w=1, x=2, y=1: d loss/d w = 2(wx-y)x = 4.
        let (loss, grad) = grad_params(&[1.0], |tape, p| {
            let x = tape.var(2.0);
            let y = tape.var(1.0);
            let r = p[0] * x - y;
            r * r
        });
        assert_eq!(loss, 1.0);
        assert!((grad[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn detached_parameters_get_zero_gradient() {
        let (_, grad) = grad_params(&[3.0, 5.0], |_, p| p[0] * p[0]);
        assert!((grad[0] - 6.0).abs() < 1e-14);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        let b = tape.var(0.0);
        assert!(a.try_div(b).is_err());
        assert!((a.try_div(a).unwrap().value() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn division_gradient() {
        let (v, g) = grad_params(&[3.0, 2.0], |_, p| p[0] / p[1]);
        assert!((v - 1.5).abs() < 1e-15);
        assert!((g[0] - 0.5).abs() < 1e-15);
        assert!((g[1] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn two_layer_net_matches_hand_backprop() {
        // y = w2 * gelu(w1 * x + b1) + b2, loss = (y - t)^2.
        let x = 0.8;
        let t = 0.3;
        let theta = [0.9, -0.2, 1.1, 0.05]; // w1, b1, w2, b2
        let (_, grad) = grad_params(&theta, |tape, p| {
            let xv = tape.var(x);
            let tv = tape.var(t);
            let y = p[2] * (p[0] * xv + p[1]).gelu() + p[3];
            let r = y - tv;
            r * r
        });
        // Hand-derived backprop.
        let z = theta[0] * x + theta[1];
        let a = z * phi_cdf(z);
        let y = theta[2] * a + theta[3];
        let dy = 2.0 * (y - t);
        let dgelu = phi_cdf(z) + z * phi_pdf(z);
        let expect = [
            dy * theta[2] * dgelu * x,
            dy * theta[2] * dgelu,
            dy * a,
            dy,
        ];
        for (g, e) in grad.iter().zip(expect.iter()) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn zero_network_zero_targets_zero_gradient() {
        let (loss, grad) = grad_params(&[0.0, 0.0, 0.0], |tape, p| {
            let x = tape.var(0.7);
            let y = p[2] * (p[0] * x + p[1]).gelu();
            y * y
        });
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn pde_residual_gradient_matches_finite_differences() {
        // One-hidden-unit net n(x, y) = w3 * gelu(w1 x + w2 y + b);
        // loss = (Laplacian n at one point)^2. The jet coefficients are
        // themselves tape scalars, so the reverse sweep differentiates
        // through the second-order forward pass.
        let theta = [0.7, -0.4, 0.9, 0.2];
        let (px, py) = (0.3, 0.6);

        let loss_at = |t: &[f64]| -> f64 {
            let lap = laplacian(
                |x: Jet2<f64>, y: Jet2<f64>| {
                    (x.scale(t[0]) + y.scale(t[1]) + Jet2::constant(t[3]))
                        .gelu()
                        .scale(t[2])
                },
                px,
                py,
            );
            lap * lap
        };

        let (loss, grad) = grad_params(&theta, |tape, p| {
            let lap = laplacian(
                |x: Jet2<Var<'_>>, y: Jet2<Var<'_>>| {
                    let w1 = Jet2::constant(p[0]);
                    let w2 = Jet2::constant(p[1]);
                    let w3 = Jet2::constant(p[2]);
                    let b = Jet2::constant(p[3]);
                    (x * w1 + y * w2 + b).gelu() * w3
                },
                tape.var(px),
                tape.var(py),
            );
            lap * lap
        });
        assert!((loss - loss_at(&theta)).abs() < 1e-12);

        let h = 1e-5;
        for k in 0..theta.len() {
            let mut tp = theta;
            tp[k] += h;
            let mut tm = theta;
            tm[k] -= h;
            let fd = (loss_at(&tp) - loss_at(&tm)) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel <= 1e-4, "param {k}: tape {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn laplacian_is_linear_on_tape() {
        let (alpha, beta) = (1.7, -0.6);
        let f = |x: Jet2<f64>, y: Jet2<f64>| (x * x * y).gelu();
        let g = |x: Jet2<f64>, y: Jet2<f64>| x * y * y + (y).gelu();
        let (px, py) = (0.45, -0.25);
        let lap_f = laplacian(f, px, py);
        let lap_g = laplacian(g, px, py);
        let lap_combo = laplacian(
            |x, y| f(x, y).scale(alpha) + g(x, y).scale(beta),
            px,
            py,
        );
        assert!((lap_combo - (alpha * lap_f + beta * lap_g)).abs() < 1e-12);
    }

    #[test]
    fn reverse_sweep_handles_fanout() {
        // v used twice: d/dv (v * v + v) = 2v + 1.
        let (val, grad) = grad_params(&[3.0], |_, p| p[0] * p[0] + p[0]);
        assert_eq!(val, 12.0);
        assert!((grad[0] - 7.0).abs() < 1e-14);
    }
}
