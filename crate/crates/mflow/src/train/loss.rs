//! The two loss terms: data MSE against oracle values and the mean squared
//! PDE residual at collocation points.

use ndarray::Array2;

use crate::sdnet::{forward_values, laplacian_stack, SdnetModel};
use crate::{Error, Result};

/// Per-step loss values; `total = data + lambda_pde * pde`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub data: f64,
    pub pde: f64,
    pub total: f64,
}

/// Mean squared error of model predictions against oracle values, over all
/// sampled points of all domains in the batch.
pub fn data_loss(
    model: &SdnetModel,
    boundaries: &[&[f64]],
    points: &[Array2<f64>],
    targets: &[Vec<f64>],
) -> Result<f64> {
    let n: usize = targets.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::invalid("empty data sample".to_string()));
    }
    let out = forward_values(model, boundaries, points)?;
    let flat_targets: Vec<f64> = targets.iter().flatten().copied().collect();
    if flat_targets.len() != out.len() {
        return Err(Error::shape("target count does not match point count".to_string()));
    }
    Ok(out
        .iter()
        .zip(&flat_targets)
        .map(|(o, t)| (o - t) * (o - t))
        .sum::<f64>()
        / n as f64)
}

/// Mean squared Laplacian of the model output over interior collocation
/// points: `(1/n) sum (Delta N)^2`.
pub fn pde_loss(model: &SdnetModel, boundary: &[f64], points: &Array2<f64>) -> Result<f64> {
    if points.nrows() == 0 {
        return Err(Error::invalid("empty collocation sample".to_string()));
    }
    for row in points.rows() {
        if !(row[0] > 0.0 && row[0] < 1.0 && row[1] > 0.0 && row[1] < 1.0) {
            return Err(Error::invalid(format!(
                "collocation point ({}, {}) not strictly interior",
                row[0], row[1]
            )));
        }
    }
    let (_, lap) = laplacian_stack(model, &[boundary], &[points.clone()])?;
    Ok(lap.iter().map(|l| l * l).sum::<f64>() / lap.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdnet::{SdnetConfig, SdnetModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> SdnetModel {
        SdnetModel::init(SdnetConfig {
            m: 2,
            conv_layers: vec![(3, 1)],
            embed_dim: 4,
            hidden: vec![4],
            seed,
        })
        .unwrap()
    }

    fn zeroed(mut model: SdnetModel) -> SdnetModel {
        let zeros = vec![0.0; model.num_params()];
        model.params.assign_flat(&zeros).unwrap();
        model
    }

    #[test]
    fn zero_model_zero_targets_zero_loss() {
        let model = zeroed(tiny_model(1));
        let g = vec![0.0; 8];
        let x = Array2::from_elem((5, 2), 0.5);
        let t = vec![vec![0.0; 5]];
        assert_eq!(data_loss(&model, &[&g], &[x], &t).unwrap(), 0.0);
    }

    #[test]
    fn zero_model_unit_targets_unit_loss() {
        let model = zeroed(tiny_model(1));
        let g = vec![0.0; 8];
        let x = Array2::from_elem((4, 2), 0.5);
        let t = vec![vec![1.0; 4]];
        assert_eq!(data_loss(&model, &[&g], &[x], &t).unwrap(), 1.0);
    }

    #[test]
    fn data_loss_matches_hand_mse() {
        let model = tiny_model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_fn((6, 2), |_| rng.gen_range(0.1..0.9));
        let t: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = data_loss(&model, &[&g], &[x.clone()], &[t.clone()]).unwrap();
        let mut hand = 0.0;
        for (r, tv) in t.iter().enumerate() {
            let o = model.forward_point(&g, x[[r, 0]], x[[r, 1]]).unwrap();
            hand += (o - tv) * (o - tv);
        }
        hand /= 6.0;
        assert!((loss - hand).abs() < 1e-12);
    }

    #[test]
    fn empty_samples_rejected() {
        let model = tiny_model(1);
        let g = vec![0.0; 8];
        assert!(data_loss(&model, &[], &[], &[]).is_err());
        let empty = Array2::zeros((0, 2));
        assert!(pde_loss(&model, &g, &empty).is_err());
    }

    #[test]
    fn zero_model_has_zero_pde_loss() {
        let model = zeroed(tiny_model(1));
        let g = vec![0.3; 8];
        let x = Array2::from_elem((7, 2), 0.4);
        assert_eq!(pde_loss(&model, &g, &x).unwrap(), 0.0);
    }

    #[test]
    fn pde_loss_matches_scalar_laplacians() {
        let model = tiny_model(9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_fn((5, 2), |_| rng.gen_range(0.1..0.9));
        let loss = pde_loss(&model, &g, &x).unwrap();
        let mut hand = 0.0;
        for r in 0..5 {
            let l = model.laplacian_at(&g, x[[r, 0]], x[[r, 1]]).unwrap();
            hand += l * l;
        }
        hand /= 5.0;
        assert!((loss - hand).abs() < 1e-10);
    }

    #[test]
    fn boundary_points_rejected_for_pde_loss() {
        let model = tiny_model(1);
        let g = vec![0.0; 8];
        let mut x = Array2::from_elem((2, 2), 0.5);
        x[[1, 0]] = 0.0;
        assert!(pde_loss(&model, &g, &x).is_err());
        x[[1, 0]] = 1.0;
        assert!(pde_loss(&model, &g, &x).is_err());
    }
}
