//! Gaussian-process boundary curves with a squared-exponential kernel.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Hyperparameters of the squared-exponential kernel
/// `k(s, s') = variance * exp(-(s - s')^2 / (2 lengthscale^2))`,
/// with `s` the perimeter parameter rescaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpKernelParams {
    pub variance: f64,
    pub lengthscale: f64,
}

impl GpKernelParams {
    pub fn new(variance: f64, lengthscale: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::invalid(format!("variance must be >= 0, got {variance}")));
        }
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(Error::invalid(format!(
                "lengthscale must be > 0, got {lengthscale}"
            )));
        }
        Ok(GpKernelParams { variance, lengthscale })
    }

    pub fn kernel(&self, s: f64, t: f64) -> f64 {
        let d = s - t;
        self.variance * (-d * d / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// In-place lower-triangular Cholesky factorization; fails on a
/// non-positive pivot.
fn cholesky(a: &mut Array2<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= a[[j, k]] * a[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(j);
        }
        let diag = diag.sqrt();
        a[[j, j]] = diag;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / diag;
        }
    }
    // Zero the strict upper triangle so the factor can be applied directly.
    for i in 0..n {
        for j in i + 1..n {
            a[[i, j]] = 0.0;
        }
    }
    Ok(())
}

/// Draws one curve of `length` values from the GP at integer positions
/// rescaled to `[0, 1]`, via Cholesky of `K + eps I`. Deterministic for a
/// fixed `(params, seed)` pair. The diagonal jitter starts at
/// `1e-8 * variance` and escalates tenfold up to three times before the draw
/// is abandoned.
pub fn sample_gp_curve(params: &GpKernelParams, length: usize, rng_seed: u64) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(Error::invalid(format!("curve length must be >= 2, got {length}")));
    }
    // Zero covariance means the curve is identically zero; skip the draw so
    // the output is exact rather than jitter-sized noise.
    if params.variance == 0.0 {
        return Ok(vec![0.0; length]);
    }

    let positions: Vec<f64> = (0..length)
        .map(|i| i as f64 / (length - 1) as f64)
        .collect();
    let base = Array2::from_shape_fn((length, length), |(i, j)| {
        params.kernel(positions[i], positions[j])
    });

    let mut jitter = 1e-8 * params.variance;
    let mut factor = None;
    for _ in 0..4 {
        let mut k = base.clone();
        for i in 0..length {
            k[[i, i]] += jitter;
        }
        if cholesky(&mut k).is_ok() {
            factor = Some(k);
            break;
        }
        jitter *= 10.0;
    }
    let l = factor.ok_or_else(|| {
        Error::Numerical(format!(
            "GP covariance not positive definite even with jitter {jitter:.3e}"
        ))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let z: Vec<f64> = (0..length)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut curve = vec![0.0; length];
    for i in 0..length {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += l[[i, j]] * z[j];
        }
        curve[i] = acc;
    }
    Ok(curve)
}
