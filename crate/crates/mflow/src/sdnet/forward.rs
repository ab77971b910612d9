//! Vectorized SDNet evaluation: boundary embedding, split/concat first
//! layer, batched forward passes, and the layer-level jet streams that carry
//! exact second derivatives with respect to the query coordinates.
//!
//! Backward passes accumulate parameter gradients for both the data loss and
//! the PDE loss; the PDE backward differentiates through the second-order
//! forward computation (the derivative streams), which requires the third
//! GELU derivative.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::model::{SdnetModel, SdnetParams};
use crate::autodiff::real::{phi_cdf, phi_pdf};
use crate::{Error, Result};

/// gelu(z) = z Phi(z).
fn g0(z: f64) -> f64 {
    z * phi_cdf(z)
}
/// gelu'(z) = Phi(z) + z phi(z).
fn g1(z: f64) -> f64 {
    phi_cdf(z) + z * phi_pdf(z)
}
/// gelu''(z) = (2 - z^2) phi(z).
fn g2(z: f64) -> f64 {
    (2.0 - z * z) * phi_pdf(z)
}
/// gelu'''(z) = (z^3 - 4 z) phi(z).
fn g3(z: f64) -> f64 {
    (z * z * z - 4.0 * z) * phi_pdf(z)
}

fn map2(a: &Array2<f64>, f: impl Fn(f64) -> f64) -> Array2<f64> {
    a.mapv(f)
}

/// Conv-stack output for one boundary curve plus the cached product
/// `W1 . emb` reused across every query point of the subdomain.
#[derive(Debug, Clone)]
pub struct BoundaryEmbedding {
    /// Flattened conv output, length `E`.
    pub emb: Array1<f64>,
    /// `W1 . emb`, length `d`.
    pub w1_product: Array1<f64>,
}

/// Per-layer conv cache: (layer input, pre-activation).
struct ConvCache {
    inputs: Vec<Array2<f64>>,
    pres: Vec<Array2<f64>>,
}

/// Circular 1-D convolution stack with GELU after every layer. Returns the
/// cache needed for backprop and the flattened embedding.
fn conv_forward(params: &SdnetParams, g: &[f64]) -> (ConvCache, Array1<f64>) {
    let l = g.len();
    let mut cur = Array2::from_shape_fn((1, l), |(_, p)| g[p]);
    let mut inputs = Vec::with_capacity(params.convs.len());
    let mut pres = Vec::with_capacity(params.convs.len());
    for conv in &params.convs {
        let (out_c, in_c, k) = conv.weight.dim();
        let off = k / 2;
        let mut pre = Array2::zeros((out_c, l));
        for oc in 0..out_c {
            for p in 0..l {
                let mut acc = conv.bias[oc];
                for ic in 0..in_c {
                    for t in 0..k {
                        let idx = (p + t + l - off) % l;
                        acc += conv.weight[[oc, ic, t]] * cur[[ic, idx]];
                    }
                }
                pre[[oc, p]] = acc;
            }
        }
        inputs.push(cur);
        cur = map2(&pre, g0);
        pres.push(pre);
    }
    let emb = Array1::from_iter(cur.iter().copied());
    (ConvCache { inputs, pres }, emb)
}

/// Backprop through the conv stack, accumulating into `grads`.
fn conv_backward(params: &SdnetParams, cache: &ConvCache, demb: &Array1<f64>, grads: &mut SdnetParams) {
    let last_c = params
        .convs
        .last()
        .map(|c| c.weight.dim().0)
        .unwrap_or(1);
    let l = demb.len() / last_c;
    let mut dact = Array2::from_shape_fn((last_c, l), |(c, p)| demb[c * l + p]);
    for (li, conv) in params.convs.iter().enumerate().rev() {
        let (out_c, in_c, k) = conv.weight.dim();
        let off = k / 2;
        let pre = &cache.pres[li];
        let input = &cache.inputs[li];
        let dz = Array2::from_shape_fn((out_c, l), |(c, p)| dact[[c, p]] * g1(pre[[c, p]]));
        let gconv = &mut grads.convs[li];
        let mut dinput = Array2::zeros((in_c, l));
        for oc in 0..out_c {
            let mut db = 0.0;
            for p in 0..l {
                db += dz[[oc, p]];
            }
            gconv.bias[oc] += db;
            for ic in 0..in_c {
                for t in 0..k {
                    let mut dw = 0.0;
                    for p in 0..l {
                        let idx = (p + t + l - off) % l;
                        dw += dz[[oc, p]] * input[[ic, idx]];
                        dinput[[ic, idx]] += conv.weight[[oc, ic, t]] * dz[[oc, p]];
                    }
                    gconv.weight[[oc, ic, t]] += dw;
                }
            }
        }
        // The dinput loop above already accumulated; replace dact for the
        // next (earlier) layer.
        dact = dinput;
    }
}

impl SdnetModel {
    /// Embeds one boundary curve and caches its `W1` product.
    pub fn embed_boundary(&self, g: &[f64]) -> Result<BoundaryEmbedding> {
        if g.len() != self.config.boundary_len() {
            return Err(Error::shape(format!(
                "boundary has {} values, model expects {}",
                g.len(),
                self.config.boundary_len()
            )));
        }
        let (_, emb) = conv_forward(&self.params, g);
        let w1_product = self.params.w1.dot(&emb);
        Ok(BoundaryEmbedding { emb, w1_product })
    }
}

/// Operation counters for the first-layer cost comparison: exact multiply
/// counts of the executed matrix products and the size of the input buffer
/// each formulation materializes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpMetrics {
    pub mults: u64,
    pub input_words: u64,
}

/// Split first layer: `U = gelu(g W1^T (+) X W2^T)` with the boundary term
/// broadcast across rows. Counts the boundary product once plus the
/// per-point coordinate product.
pub fn first_layer_split(
    model: &SdnetModel,
    emb: &BoundaryEmbedding,
    x: &Array2<f64>,
) -> (Array2<f64>, OpMetrics) {
    let q = x.nrows();
    let d = model.config.embed_dim;
    let e = emb.emb.len();
    let mut pre = x.dot(&model.params.w2.t());
    for mut row in pre.rows_mut() {
        row += &emb.w1_product;
    }
    let u = map2(&pre, g0);
    let metrics = OpMetrics {
        mults: (e * d + 2 * q * d) as u64,
        input_words: (e + 2 * q) as u64,
    };
    (u, metrics)
}

/// Reference concatenated first layer: replicates the embedding into every
/// input row and multiplies by `[W1 | W2]`. Retained for the equivalence
/// test and cost comparison.
pub fn first_layer_concat(
    model: &SdnetModel,
    emb: &BoundaryEmbedding,
    x: &Array2<f64>,
) -> (Array2<f64>, OpMetrics) {
    let q = x.nrows();
    let d = model.config.embed_dim;
    let e = emb.emb.len();
    let mut input = Array2::zeros((q, e + 2));
    for (r, mut row) in input.rows_mut().into_iter().enumerate() {
        row.slice_mut(ndarray::s![..e]).assign(&emb.emb);
        row[e] = x[[r, 0]];
        row[e + 1] = x[[r, 1]];
    }
    let mut w = Array2::zeros((d, e + 2));
    w.slice_mut(ndarray::s![.., ..e]).assign(&model.params.w1);
    w.slice_mut(ndarray::s![.., e..]).assign(&model.params.w2);
    let u = map2(&input.dot(&w.t()), g0);
    let metrics = OpMetrics {
        mults: (q * (e + 2) * d) as u64,
        input_words: (q * (e + 2)) as u64,
    };
    (u, metrics)
}

/// Cache of one stacked forward pass (all domains' points concatenated).
pub struct ForwardCache {
    conv_caches: Vec<ConvCache>,
    embs: Vec<Array1<f64>>,
    x: Array2<f64>,
    /// Row ranges per domain: domain k owns rows `offsets[k]..offsets[k+1]`.
    offsets: Vec<usize>,
    pre1: Array2<f64>,
    /// Activations entering MLP layer l (`acts[0]` is the split-layer
    /// output).
    acts: Vec<Array2<f64>>,
    /// Hidden-layer pre-activations.
    pres: Vec<Array2<f64>>,
}

fn stack_points(points: &[Array2<f64>]) -> (Array2<f64>, Vec<usize>) {
    let total: usize = points.iter().map(|p| p.nrows()).sum();
    let mut x = Array2::zeros((total, 2));
    let mut offsets = Vec::with_capacity(points.len() + 1);
    offsets.push(0);
    let mut row = 0;
    for p in points {
        x.slice_mut(ndarray::s![row..row + p.nrows(), ..]).assign(p);
        row += p.nrows();
        offsets.push(row);
    }
    (x, offsets)
}

/// Stacked forward pass over several domains. Each boundary is embedded
/// once; all points flow through the MLP in single matrix products.
pub fn forward_stack(
    model: &SdnetModel,
    boundaries: &[&[f64]],
    points: &[Array2<f64>],
) -> Result<(ForwardCache, Array1<f64>)> {
    if boundaries.len() != points.len() {
        return Err(Error::shape("boundary/point batch length mismatch".to_string()));
    }
    let blen = model.config.boundary_len();
    for b in boundaries {
        if b.len() != blen {
            return Err(Error::shape(format!(
                "boundary has {} values, model expects {blen}",
                b.len()
            )));
        }
    }
    let (x, offsets) = stack_points(points);
    let mut conv_caches = Vec::with_capacity(boundaries.len());
    let mut embs = Vec::with_capacity(boundaries.len());
    let mut pre1 = x.dot(&model.params.w2.t());
    for (k, g) in boundaries.iter().enumerate() {
        let (cache, emb) = conv_forward(&model.params, g);
        let bterm = model.params.w1.dot(&emb);
        for mut row in pre1
            .slice_mut(ndarray::s![offsets[k]..offsets[k + 1], ..])
            .rows_mut()
        {
            row += &bterm;
        }
        conv_caches.push(cache);
        embs.push(emb);
    }
    let mut acts = vec![map2(&pre1, g0)];
    let mut pres = Vec::new();
    let n_hidden = model.params.mlp.len() - 1;
    for layer in &model.params.mlp[..n_hidden] {
        let mut pre = acts.last().unwrap().dot(&layer.weight.t());
        for mut row in pre.rows_mut() {
            row += &layer.bias;
        }
        acts.push(map2(&pre, g0));
        pres.push(pre);
    }
    let out_layer = model.params.mlp.last().unwrap();
    let out = acts.last().unwrap().dot(&out_layer.weight.t()) + out_layer.bias[0];
    let out = out.index_axis_move(Axis(1), 0);
    Ok((
        ForwardCache {
            conv_caches,
            embs,
            x,
            offsets,
            pre1,
            acts,
            pres,
        },
        out,
    ))
}

/// Forward pass without retaining intermediates; use for large evaluation
/// batches.
pub fn forward_values(
    model: &SdnetModel,
    boundaries: &[&[f64]],
    points: &[Array2<f64>],
) -> Result<Array1<f64>> {
    let (cache, out) = forward_stack(model, boundaries, points)?;
    drop(cache);
    Ok(out)
}

/// Backprop of a data-style loss: `dout` holds `d loss / d out` per stacked
/// row. Returns parameter gradients.
pub fn backward_data(model: &SdnetModel, cache: &ForwardCache, dout: &Array1<f64>) -> SdnetParams {
    let mut grads = model.zero_grads();
    let q = dout.len();
    let dout_col = dout.view().into_shape_with_order((q, 1)).unwrap();

    let out_layer_idx = model.params.mlp.len() - 1;
    let h_last = cache.acts.last().unwrap();
    {
        let gl = &mut grads.mlp[out_layer_idx];
        gl.weight += &dout_col.t().dot(h_last);
        gl.bias[0] += dout.sum();
    }
    let mut da = dout_col.dot(&model.params.mlp[out_layer_idx].weight);

    for l in (0..out_layer_idx).rev() {
        let dz = &da * &map2(&cache.pres[l], g1);
        {
            let gl = &mut grads.mlp[l];
            gl.weight += &dz.t().dot(&cache.acts[l]);
            gl.bias += &dz.sum_axis(Axis(0));
        }
        da = dz.dot(&model.params.mlp[l].weight);
    }

    // Split layer.
    let dpre1 = &da * &map2(&cache.pre1, g1);
    grads.w2 += &dpre1.t().dot(&cache.x);
    for k in 0..cache.embs.len() {
        let rows = dpre1.slice(ndarray::s![cache.offsets[k]..cache.offsets[k + 1], ..]);
        let dbterm = rows.sum_axis(Axis(0));
        let emb = &cache.embs[k];
        for (di, &db) in dbterm.iter().enumerate() {
            if db != 0.0 {
                for (ei, &ev) in emb.iter().enumerate() {
                    grads.w1[[di, ei]] += db * ev;
                }
            }
        }
        let demb = model.params.w1.t().dot(&dbterm);
        conv_backward(&model.params, &cache.conv_caches[k], &demb, &mut grads);
    }
    grads
}

/// One GELU block of the jet forward: inputs and outputs of all five
/// streams (value, d/dx, d2/dx2, d/dy, d2/dy2).
struct JetBlock {
    pre_v: Array2<f64>,
    pre_dx: Array2<f64>,
    pre_dxx: Array2<f64>,
    pre_dy: Array2<f64>,
    pre_dyy: Array2<f64>,
    act_v: Array2<f64>,
    act_dx: Array2<f64>,
    act_dxx: Array2<f64>,
    act_dy: Array2<f64>,
    act_dyy: Array2<f64>,
}

impl JetBlock {
    fn from_pre(
        pre_v: Array2<f64>,
        pre_dx: Array2<f64>,
        pre_dxx: Array2<f64>,
        pre_dy: Array2<f64>,
        pre_dyy: Array2<f64>,
    ) -> Self {
        let gd1 = map2(&pre_v, g1);
        let gd2 = map2(&pre_v, g2);
        let act_v = map2(&pre_v, g0);
        let act_dx = &gd1 * &pre_dx;
        let act_dxx = &gd2 * &pre_dx * &pre_dx + &gd1 * &pre_dxx;
        let act_dy = &gd1 * &pre_dy;
        let act_dyy = &gd2 * &pre_dy * &pre_dy + &gd1 * &pre_dyy;
        JetBlock {
            pre_v,
            pre_dx,
            pre_dxx,
            pre_dy,
            pre_dyy,
            act_v,
            act_dx,
            act_dxx,
            act_dy,
            act_dyy,
        }
    }
}

/// Cache of one stacked second-order forward pass.
pub struct JetCache {
    conv_caches: Vec<ConvCache>,
    embs: Vec<Array1<f64>>,
    x: Array2<f64>,
    offsets: Vec<usize>,
    blocks: Vec<JetBlock>,
}

/// Stacked Laplacian evaluation: returns the cache for the PDE backward and
/// the Laplacian of the model output at every stacked point.
pub fn laplacian_stack(
    model: &SdnetModel,
    boundaries: &[&[f64]],
    points: &[Array2<f64>],
) -> Result<(JetCache, Array1<f64>)> {
    if boundaries.len() != points.len() {
        return Err(Error::shape("boundary/point batch length mismatch".to_string()));
    }
    let blen = model.config.boundary_len();
    let (x, offsets) = stack_points(points);
    let q = x.nrows();
    let d = model.config.embed_dim;

    let mut conv_caches = Vec::with_capacity(boundaries.len());
    let mut embs = Vec::with_capacity(boundaries.len());
    let mut pre_v = x.dot(&model.params.w2.t());
    for (k, g) in boundaries.iter().enumerate() {
        if g.len() != blen {
            return Err(Error::shape(format!(
                "boundary has {} values, model expects {blen}",
                g.len()
            )));
        }
        let (cache, emb) = conv_forward(&model.params, g);
        let bterm = model.params.w1.dot(&emb);
        for mut row in pre_v
            .slice_mut(ndarray::s![offsets[k]..offsets[k + 1], ..])
            .rows_mut()
        {
            row += &bterm;
        }
        conv_caches.push(cache);
        embs.push(emb);
    }
    // Derivative seeds: d pre1 / dx is W2 column 0 broadcast to every row,
    // curvature seeds are zero.
    let w2x = model.params.w2.column(0);
    let w2y = model.params.w2.column(1);
    let broadcast = |col: ArrayView1<f64>| {
        let mut m = Array2::zeros((q, d));
        for mut row in m.rows_mut() {
            row.assign(&col);
        }
        m
    };
    let mut blocks = vec![JetBlock::from_pre(
        pre_v,
        broadcast(w2x),
        Array2::zeros((q, d)),
        broadcast(w2y),
        Array2::zeros((q, d)),
    )];

    let n_hidden = model.params.mlp.len() - 1;
    for layer in &model.params.mlp[..n_hidden] {
        let prev = blocks.last().unwrap();
        let wt = layer.weight.t();
        let mut pre_v = prev.act_v.dot(&wt);
        for mut row in pre_v.rows_mut() {
            row += &layer.bias;
        }
        let block = JetBlock::from_pre(
            pre_v,
            prev.act_dx.dot(&wt),
            prev.act_dxx.dot(&wt),
            prev.act_dy.dot(&wt),
            prev.act_dyy.dot(&wt),
        );
        blocks.push(block);
    }
    let last = blocks.last().unwrap();
    let out_layer = model.params.mlp.last().unwrap();
    let curv = &last.act_dxx + &last.act_dyy;
    let lap = curv.dot(&out_layer.weight.t()).index_axis_move(Axis(1), 0);
    Ok((
        JetCache {
            conv_caches,
            embs,
            x,
            offsets,
            blocks,
        },
        lap,
    ))
}

/// Backprop of a PDE-style loss through the second-order forward pass:
/// `dlap` holds `d loss / d Laplacian` per stacked row.
pub fn backward_pde(model: &SdnetModel, cache: &JetCache, dlap: &Array1<f64>) -> SdnetParams {
    let mut grads = model.zero_grads();
    let q = dlap.len();
    let d = model.config.embed_dim;
    let dlap_col = dlap.view().into_shape_with_order((q, 1)).unwrap();

    let out_layer_idx = model.params.mlp.len() - 1;
    let last = cache.blocks.last().unwrap();
    {
        let curv = &last.act_dxx + &last.act_dyy;
        let gl = &mut grads.mlp[out_layer_idx];
        gl.weight += &dlap_col.t().dot(&curv);
        // The output bias never reaches the Laplacian.
    }
    let w_out = &model.params.mlp[out_layer_idx].weight;
    let zero = || Array2::zeros(last.act_v.raw_dim());
    let mut a_v = zero();
    let mut a_dx = zero();
    let mut a_dxx = dlap_col.dot(w_out);
    let mut a_dy = zero();
    let mut a_dyy = a_dxx.clone();

    for (bi, block) in cache.blocks.iter().enumerate().rev() {
        // Backward through the GELU jet node.
        let gd1 = map2(&block.pre_v, g1);
        let gd2 = map2(&block.pre_v, g2);
        let gd3 = map2(&block.pre_v, g3);
        let a_pre_v = &a_v * &gd1
            + &a_dx * &gd2 * &block.pre_dx
            + &a_dxx * &(&gd3 * &block.pre_dx * &block.pre_dx + &gd2 * &block.pre_dxx)
            + &a_dy * &gd2 * &block.pre_dy
            + &a_dyy * &(&gd3 * &block.pre_dy * &block.pre_dy + &gd2 * &block.pre_dyy);
        let two = 2.0;
        let a_pre_dx = &a_dx * &gd1 + &(&a_dxx * &gd2 * &block.pre_dx) * two;
        let a_pre_dxx = &a_dxx * &gd1;
        let a_pre_dy = &a_dy * &gd1 + &(&a_dyy * &gd2 * &block.pre_dy) * two;
        let a_pre_dyy = &a_dyy * &gd1;

        if bi > 0 {
            // Backward through the linear layer feeding this block.
            let prev = &cache.blocks[bi - 1];
            let layer_idx = bi - 1;
            {
                let gl = &mut grads.mlp[layer_idx];
                gl.weight += &a_pre_v.t().dot(&prev.act_v);
                gl.weight += &a_pre_dx.t().dot(&prev.act_dx);
                gl.weight += &a_pre_dxx.t().dot(&prev.act_dxx);
                gl.weight += &a_pre_dy.t().dot(&prev.act_dy);
                gl.weight += &a_pre_dyy.t().dot(&prev.act_dyy);
                gl.bias += &a_pre_v.sum_axis(Axis(0));
            }
            let w = &model.params.mlp[layer_idx].weight;
            a_v = a_pre_v.dot(w);
            a_dx = a_pre_dx.dot(w);
            a_dxx = a_pre_dxx.dot(w);
            a_dy = a_pre_dy.dot(w);
            a_dyy = a_pre_dyy.dot(w);
        } else {
            // Split layer: pre_v = bterm + X W2^T; dx seed is W2 col 0.
            grads.w2 += &a_pre_v.t().dot(&cache.x);
            let seed_x = a_pre_dx.sum_axis(Axis(0));
            let seed_y = a_pre_dy.sum_axis(Axis(0));
            for di in 0..d {
                grads.w2[[di, 0]] += seed_x[di];
                grads.w2[[di, 1]] += seed_y[di];
            }
            for k in 0..cache.embs.len() {
                let rows = a_pre_v.slice(ndarray::s![cache.offsets[k]..cache.offsets[k + 1], ..]);
                let dbterm = rows.sum_axis(Axis(0));
                let emb = &cache.embs[k];
                for (di, &db) in dbterm.iter().enumerate() {
                    if db != 0.0 {
                        for (ei, &ev) in emb.iter().enumerate() {
                            grads.w1[[di, ei]] += db * ev;
                        }
                    }
                }
                let demb = model.params.w1.t().dot(&dbterm);
                conv_backward(&model.params, &cache.conv_caches[k], &demb, &mut grads);
            }
        }
    }
    grads
}

impl SdnetModel {
    /// Predicts the solution at `q` normalized local points for one
    /// boundary. NaN in the output is reported as an error (diverged
    /// weights).
    pub fn forward(&self, g: &[f64], points: &Array2<f64>) -> Result<Vec<f64>> {
        let out = forward_values(self, &[g], &[points.clone()])?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("NaN/Inf in model output".to_string()));
        }
        Ok(out.to_vec())
    }

    /// Batched prediction over many (boundary, points) pairs; each boundary
    /// is embedded once and all points share the MLP matrix products.
    pub fn forward_many(
        &self,
        batch: &[(&[f64], Array2<f64>)],
    ) -> Result<Vec<Vec<f64>>> {
        let boundaries: Vec<&[f64]> = batch.iter().map(|(g, _)| *g).collect();
        let points: Vec<Array2<f64>> = batch.iter().map(|(_, x)| x.clone()).collect();
        let out = forward_values(self, &boundaries, &points)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("NaN/Inf in model output".to_string()));
        }
        let mut result = Vec::with_capacity(batch.len());
        let mut row = 0;
        for (_, x) in batch {
            let q = x.nrows();
            result.push(out.slice(ndarray::s![row..row + q]).to_vec());
            row += q;
        }
        Ok(result)
    }
}
