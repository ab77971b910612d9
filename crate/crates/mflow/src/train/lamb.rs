//! LAMB optimizer with layer-wise trust ratios; AdamW is the same update
//! with the trust ratio pinned to one.

use crate::sdnet::SdnetModel;
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Lamb,
    AdamW,
}

/// Per-parameter Adam moments plus the tensor segmentation used for the
/// layer-wise trust ratio.
#[derive(Debug, Clone)]
pub struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    /// (offset, len) per parameter tensor.
    segments: Vec<(usize, usize)>,
}

impl OptState {
    pub fn new(model: &SdnetModel) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (_, len) in model.params.segments() {
            segments.push((offset, len));
            offset += len;
        }
        OptState {
            m: vec![0.0; offset],
            v: vec![0.0; offset],
            step: 0,
            segments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One optimizer step over the flat parameter vector. Per tensor: Adam
/// direction `r = m_hat / (sqrt(v_hat) + eps)`, update `r + wd * theta`,
/// trust ratio `|theta| / |update|` (1 when either norm is zero), then
/// `theta -= lr * ratio * update`. A NaN gradient aborts with a diagnostic.
pub fn optimizer_step(
    theta: &mut [f64],
    grads: &[f64],
    state: &mut OptState,
    lr: f64,
    weight_decay: f64,
    kind: Optimizer,
) -> Result<()> {
    if theta.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::shape(format!(
            "optimizer state holds {} parameters, got theta {} / grads {}",
            state.m.len(),
            theta.len(),
            grads.len()
        )));
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at parameter {k}: {}",
            grads[k]
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for ((m, v), g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grads) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    }
    for &(off, len) in &state.segments {
        let slice = off..off + len;
        let mut update = Vec::with_capacity(len);
        for k in slice.clone() {
            let m_hat = state.m[k] / bc1;
            let v_hat = state.v[k] / bc2;
            let r = m_hat / (v_hat.sqrt() + EPS);
            update.push(r + weight_decay * theta[k]);
        }
        let ratio = match kind {
            Optimizer::AdamW => 1.0,
            Optimizer::Lamb => {
                let tn = norm(&theta[slice.clone()]);
                let un = norm(&update);
                if tn > 0.0 && un > 0.0 {
                    tn / un
                } else {
                    1.0
                }
            }
        };
        for (k, u) in slice.zip(update) {
            theta[k] -= lr * ratio * u;
        }
    }
    Ok(())
}
