//! Alpha-beta cost model of the distributed predictor.

use crate::{Error, Result};

/// Model inputs: global resolution `n` (cells per side), rank count `p`,
/// subdomain side `m`, subdomain-lattice density divisor `d` (anchors every
/// `m/d` cells), iteration count, network latency `alpha`, bandwidth `beta`
/// (bytes per unit time), and per-inference compute cost `c`.
#[derive(Debug, Clone, Copy)]
pub struct CostModelInput {
    pub n: f64,
    pub p: f64,
    pub m: f64,
    pub d: f64,
    pub iterations: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModelOutput {
    /// `8 I alpha + (I / beta) * 16 N d / sqrt(P)`.
    pub comm: f64,
    /// `c (d N)^2 / (m^2 P)`.
    pub comp: f64,
    /// `(d N)^2 / (m^2 P)`.
    pub subdomains_per_proc: f64,
}

pub fn cost_model(input: &CostModelInput) -> Result<CostModelOutput> {
    let CostModelInput {
        n,
        p,
        m,
        d,
        iterations,
        alpha,
        beta,
        c,
    } = *input;
    for (name, v) in [
        ("n", n),
        ("p", p),
        ("m", m),
        ("d", d),
        ("iterations", iterations),
        ("alpha", alpha),
        ("beta", beta),
        ("c", c),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("cost model input {name} must be positive, got {v}")));
        }
    }
    let subdomains_per_proc = (d * n) * (d * n) / (m * m * p);
    Ok(CostModelOutput {
        comm: 8.0 * iterations * alpha + (iterations / beta) * (16.0 * n * d / p.sqrt()),
        comp: c * subdomains_per_proc,
        subdomains_per_proc,
    })
}
