//! Scalar per-point SDNet evaluation, generic over the scalar type.
//!
//! This is a second, loop-based implementation of the forward pass used as
//! the reference path for derivative checks: with `T = f64` it powers
//! single-point Laplacians through the jet arithmetic; with tape variables
//! the PDE residual itself becomes differentiable with respect to the
//! parameters.


use super::model::{SdnetConfig, SdnetModel};
use crate::autodiff::{laplacian, Jet2, Real};
use crate::{Error, Result};

/// Evaluates the model at one point with parameters given as a flat slice in
/// declaration order (see `SdnetParams::flatten`). The boundary curve is
/// held constant; the coordinates enter as jets.
pub fn forward_point_generic<T: Real>(
    config: &SdnetConfig,
    flat: &[T],
    g: &[f64],
    x: Jet2<T>,
    y: Jet2<T>,
) -> Jet2<T> {
    let lift = |c: f64| flat[0].lift(c);
    let l = g.len();
    let mut pos = 0usize;

    // Conv stack on plain scalars (the curve does not depend on x, y).
    let mut cur: Vec<Vec<T>> = vec![g.iter().map(|v| lift(*v)).collect()];
    for &(k, out_c) in &config.conv_layers {
        let in_c = cur.len();
        let w = &flat[pos..pos + out_c * in_c * k];
        pos += out_c * in_c * k;
        let b = &flat[pos..pos + out_c];
        pos += out_c;
        let off = k / 2;
        let mut next = Vec::with_capacity(out_c);
        for oc in 0..out_c {
            let mut channel = Vec::with_capacity(l);
            for p in 0..l {
                let mut acc = b[oc];
                for (ic, ch) in cur.iter().enumerate() {
                    for t in 0..k {
                        let idx = (p + t + l - off) % l;
                        acc = acc + w[(oc * in_c + ic) * k + t] * ch[idx];
                    }
                }
                channel.push(acc.gelu());
            }
            next.push(channel);
        }
        cur = next;
    }
    let emb: Vec<T> = cur.into_iter().flatten().collect();

    let d = config.embed_dim;
    let e = config.embedding_len();
    let w1 = &flat[pos..pos + d * e];
    pos += d * e;
    let w2 = &flat[pos..pos + d * 2];
    pos += d * 2;

    // Split layer: boundary product plus coordinate jets.
    let mut h: Vec<Jet2<T>> = Vec::with_capacity(d);
    for u in 0..d {
        let mut bterm = lift(0.0);
        for (ei, ev) in emb.iter().enumerate() {
            bterm = bterm + w1[u * e + ei] * *ev;
        }
        let pre = x * Jet2::constant(w2[u * 2]) + y * Jet2::constant(w2[u * 2 + 1])
            + Jet2::constant(bterm);
        h.push(pre.gelu());
    }

    let mut widths: Vec<usize> = config.hidden.clone();
    widths.push(1);
    let mut prev = d;
    let mut act = h;
    for (li, &width) in widths.iter().enumerate() {
        let w = &flat[pos..pos + width * prev];
        pos += width * prev;
        let b = &flat[pos..pos + width];
        pos += width;
        let mut next = Vec::with_capacity(width);
        for o in 0..width {
            let mut acc = Jet2::constant(b[o]);
            for (i, a) in act.iter().enumerate() {
                acc = acc + *a * Jet2::constant(w[o * prev + i]);
            }
            if li + 1 < widths.len() {
                acc = acc.gelu();
            }
            next.push(acc);
        }
        act = next;
        prev = width;
    }
    act[0]
}

impl SdnetModel {
    /// Prediction at one normalized local point via the scalar path.
    pub fn forward_point(&self, g: &[f64], x: f64, y: f64) -> Result<f64> {
        self.check_boundary(g)?;
        let flat = self.params.flatten();
        let out = forward_point_generic(
            &self.config,
            &flat,
            g,
            Jet2::constant(x),
            Jet2::constant(y),
        );
        Ok(out.v)
    }

    /// Laplacian of the model output with respect to the normalized local
    /// coordinates, with the boundary held constant. Delegates to the jet
    /// arithmetic over the forward graph.
    pub fn laplacian_at(&self, g: &[f64], x: f64, y: f64) -> Result<f64> {
        self.check_boundary(g)?;
        let flat = self.params.flatten();
        Ok(laplacian(
            |jx, jy| forward_point_generic(&self.config, &flat, g, jx, jy),
            x,
            y,
        ))
    }

    fn check_boundary(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.config.boundary_len() {
            return Err(Error::shape(format!(
                "boundary has {} values, model expects {}",
                g.len(),
                self.config.boundary_len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdnet::forward::{forward_values, laplacian_stack};
    use crate::sdnet::model::SdnetConfig;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> SdnetModel {
        SdnetModel::init(SdnetConfig {
            m: 4,
            conv_layers: vec![(3, 2), (3, 1)],
            embed_dim: 6,
            hidden: vec![6, 6],
            seed,
        })
        .unwrap()
    }

    #[test]
    fn scalar_path_matches_vectorized_forward() {
        let model = small_model(21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_fn((9, 2), |_| rng.gen_range(0.1..0.9));
        let vec_out = forward_values(&model, &[&g], &[x.clone()]).unwrap();
        for (r, v) in vec_out.iter().enumerate() {
            let s = model.forward_point(&g, x[[r, 0]], x[[r, 1]]).unwrap();
            assert!((s - v).abs() < 1e-11, "row {r}: scalar {s} vs vector {v}");
        }
    }

    #[test]
    fn laplacian_stack_matches_scalar_laplacian() {
        let model = small_model(22);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_fn((7, 2), |_| rng.gen_range(0.1..0.9));
        let (_, lap) = laplacian_stack(&model, &[&g], &[x.clone()]).unwrap();
        for (r, l) in lap.iter().enumerate() {
            let s = model.laplacian_at(&g, x[[r, 0]], x[[r, 1]]).unwrap();
            assert!((s - l).abs() < 1e-9, "row {r}: scalar {s} vs stacked {l}");
        }
    }

    #[test]
    fn zero_model_has_zero_laplacian() {
        let mut model = small_model(1);
        let zeros = vec![0.0; model.num_params()];
        model.params.assign_flat(&zeros).unwrap();
        let g = vec![0.3; 16];
        assert_eq!(model.laplacian_at(&g, 0.4, 0.6).unwrap(), 0.0);
    }

    #[test]
    fn laplacian_matches_five_point_differences() {
        let model = small_model(33);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 1e-3;
        for _ in 0..20 {
            let (x, y) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
            let lap = model.laplacian_at(&g, x, y).unwrap();
            let f = |x: f64, y: f64| model.forward_point(&g, x, y).unwrap();
            let fd = (f(x + h, y) + f(x - h, y) + f(x, y + h) + f(x, y - h) - 4.0 * f(x, y))
                / (h * h);
            let rel = (lap - fd).abs() / fd.abs().max(1e-6);
            assert!(rel <= 1e-4, "at ({x},{y}): jet {lap} vs fd {fd}");
        }
    }

    #[test]
    fn boundary_length_checked() {
        let model = small_model(2);
        assert!(model.laplacian_at(&[0.0; 7], 0.5, 0.5).is_err());
    }
}
