//! The abstract subdomain solver used by the predictor, with a trained
//! SDNet implementation and a numerical-oracle implementation that decouples
//! the Schwarz iteration from model accuracy.

use ndarray::Array2;

use crate::grid::build_grid;
use crate::oracle::solve_dirichlet;
use crate::sdnet::SdnetModel;
use crate::{Error, Result};

/// Solves one subdomain: given the 4m CCW perimeter values, returns the
/// solution at normalized local query points in `[0, 1]^2`.
pub trait SubSolver: Sync {
    /// Subdomain side length in cells.
    fn side_cells(&self) -> usize;

    fn solve(&self, perimeter: &[f64], queries: &Array2<f64>) -> Result<Vec<f64>>;

    /// Solves a batch of disjoint subdomains that share one query pattern.
    /// The default loops; implementations may batch.
    fn solve_many(&self, perimeters: &[Vec<f64>], queries: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        perimeters.iter().map(|p| self.solve(p, queries)).collect()
    }
}

/// Trained-network subdomain solver.
pub struct SdnetSolver {
    pub model: SdnetModel,
}

impl SdnetSolver {
    pub fn new(model: SdnetModel) -> Self {
        SdnetSolver { model }
    }
}

impl SubSolver for SdnetSolver {
    fn side_cells(&self) -> usize {
        self.model.config.m
    }

    fn solve(&self, perimeter: &[f64], queries: &Array2<f64>) -> Result<Vec<f64>> {
        self.model.forward(perimeter, queries)
    }

    fn solve_many(&self, perimeters: &[Vec<f64>], queries: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        let batch: Vec<(&[f64], Array2<f64>)> = perimeters
            .iter()
            .map(|p| (p.as_slice(), queries.clone()))
            .collect();
        self.model.forward_many(&batch)
    }
}

/// Multigrid-backed subdomain solver; queries must sit on the subdomain
/// lattice.
pub struct OracleSolver {
    pub m: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl OracleSolver {
    pub fn new(m: usize) -> Self {
        OracleSolver {
            m,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl SubSolver for OracleSolver {
    fn side_cells(&self) -> usize {
        self.m
    }

    fn solve(&self, perimeter: &[f64], queries: &Array2<f64>) -> Result<Vec<f64>> {
        // The discrete Dirichlet solution is independent of the physical
        // spacing, so a unit-extent patch serves every subdomain.
        let grid = build_grid(self.m + 1, self.m + 1, 1.0 / self.m as f64, (0.0, 0.0))?;
        let (field, report) = solve_dirichlet(&grid, perimeter, self.tol, self.max_iter)?;
        if !report.converged {
            return Err(Error::NoConvergence(format!(
                "subdomain solve stalled at residual {}",
                report.final_residual
            )));
        }
        let mut out = Vec::with_capacity(queries.nrows());
        for row in queries.rows() {
            let fi = row[0] * self.m as f64;
            let fj = row[1] * self.m as f64;
            let (i, j) = (fi.round() as usize, fj.round() as usize);
            if (fi - i as f64).abs() > 1e-9 || (fj - j as f64).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "oracle subdomain solver needs lattice-aligned queries, got ({}, {})",
                    row[0], row[1]
                )));
            }
            out.push(field.values[[i, j]]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdnet::SdnetConfig;

    #[test]
    fn oracle_solver_reproduces_affine() {
        let m = 8;
        let solver = OracleSolver::new(m);
        let grid = build_grid(m + 1, m + 1, 1.0 / m as f64, (0.0, 0.0)).unwrap();
        let perim: Vec<f64> = grid
            .perimeter()
            .into_iter()
            .map(|(i, j)| i as f64 / m as f64 + 2.0 * j as f64 / m as f64)
            .collect();
        let queries = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 0.25, 0.75]).unwrap();
        let out = solver.solve(&perim, &queries).unwrap();
        assert!((out[0] - 1.5).abs() < 1e-9);
        assert!((out[1] - 1.75).abs() < 1e-9);
    }

    #[test]
    fn oracle_solver_rejects_off_lattice_queries() {
        let solver = OracleSolver::new(4);
        let perim = vec![0.0; 16];
        let queries = Array2::from_shape_vec((1, 2), vec![0.3, 0.5]).unwrap();
        assert!(solver.solve(&perim, &queries).is_err());
    }

    #[test]
    fn sdnet_solver_delegates_to_forward() {
        let model = SdnetModel::init(SdnetConfig {
            m: 2,
            conv_layers: vec![(3, 1)],
            embed_dim: 4,
            hidden: vec![4],
            seed: 2,
        })
        .unwrap();
        let solver = SdnetSolver::new(model);
        let perim = vec![0.1; 8];
        let queries = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 0.5, 1.0]).unwrap();
        let direct = solver.model.forward(&perim, &queries).unwrap();
        let via = solver.solve(&perim, &queries).unwrap();
        assert_eq!(direct, via);
        let many = solver
            .solve_many(&[perim.clone(), perim.clone()], &queries)
            .unwrap();
        for vals in many {
            for (a, b) in vals.iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
