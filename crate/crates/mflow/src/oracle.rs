//! Ground-truth solver for the Dirichlet Laplace problem plus error metrics.
//!
//! The solver is geometric multigrid (V-cycles with red-black Gauss-Seidel
//! smoothing) on the 5-point stencil, falling back to plain red-black SOR on
//! grids too small or oddly shaped to coarsen. All arithmetic is in double
//! precision; the residual is measured in the max-norm.

use ndarray::Array2;

use crate::grid::GridSpec;
use crate::{Error, Result};

/// A dense solution field over a grid.
#[derive(Debug, Clone)]
pub struct Field {
    pub grid: GridSpec,
    /// `nx x ny` values indexed `[i, j]` (i along x).
    pub values: Array2<f64>,
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Self {
        Field {
            values: Array2::zeros((grid.nx, grid.ny)),
            grid,
        }
    }

    /// Reads the field along the CCW grid perimeter.
    pub fn boundary_values(&self) -> Vec<f64> {
        self.grid
            .perimeter()
            .into_iter()
            .map(|(i, j)| self.values[[i, j]])
            .collect()
    }
}

/// Outcome of one solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    /// V-cycles (or SOR sweeps in fallback mode) performed.
    pub iterations: usize,
    /// Max-norm of the 5-point residual over interior points.
    pub final_residual: f64,
    pub converged: bool,
}

const SMOOTH_PRE: usize = 2;
const SMOOTH_POST: usize = 2;
const COARSEST_SWEEPS: usize = 60;

/// Solves the discrete Laplace equation with the given Dirichlet data.
///
/// `boundary` holds one value per perimeter point in the CCW order of
/// [`GridSpec::perimeter`]. Stops when the interior max-norm residual drops
/// to `tol` or after `max_iter` cycles, whichever comes first; the
/// non-converged case is reported, not an error.
pub fn solve_dirichlet(
    grid: &GridSpec,
    boundary: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Field, SolveReport)> {
    if boundary.len() != grid.perimeter_len() {
        return Err(Error::shape(format!(
            "boundary has {} values, grid perimeter has {}",
            boundary.len(),
            grid.perimeter_len()
        )));
    }
    if boundary.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("boundary contains NaN or Inf".to_string()));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }

    let mut field = Field::zeros(*grid);
    for (k, (i, j)) in grid.perimeter().into_iter().enumerate() {
        field.values[[i, j]] = boundary[k];
    }

    // No interior points: the boundary is the whole solution.
    if grid.nx < 3 || grid.ny < 3 {
        return Ok((
            field,
            SolveReport {
                iterations: 0,
                final_residual: 0.0,
                converged: true,
            },
        ));
    }

    let rhs = Array2::zeros((grid.nx, grid.ny));
    let use_mg = can_coarsen(grid.nx, grid.ny);
    let omega = sor_omega(grid.nx, grid.ny);

    let mut residual = residual_max(&field.values, &rhs, grid.h);
    let mut iterations = 0;
    while residual > tol && iterations < max_iter {
        if use_mg {
            vcycle(&mut field.values, &rhs, grid.h);
        } else {
            rb_sweep(&mut field.values, &rhs, grid.h, omega);
        }
        iterations += 1;
        residual = residual_max(&field.values, &rhs, grid.h);
    }

    Ok((
        field,
        SolveReport {
            iterations,
            final_residual: residual,
            converged: residual <= tol,
        },
    ))
}

/// Max-norm of the 5-point stencil residual over interior points:
/// `max |u[i-1,j] + u[i+1,j] + u[i,j-1] + u[i,j+1] - 4 u[i,j]| / h^2`.
pub fn residual_norm(field: &Field) -> f64 {
    let rhs = Array2::zeros((field.grid.nx, field.grid.ny));
    residual_max(&field.values, &rhs, field.grid.h)
}

fn same_grid(a: &Field, b: &Field) -> Result<()> {
    let (ga, gb) = (&a.grid, &b.grid);
    let h_close = (ga.h - gb.h).abs() <= 1e-12 * ga.h.max(gb.h);
    if ga.nx != gb.nx || ga.ny != gb.ny || !h_close {
        return Err(Error::shape(format!(
            "field grids differ: {}x{} (h={}) vs {}x{} (h={})",
            ga.nx, ga.ny, ga.h, gb.nx, gb.ny, gb.h
        )));
    }
    Ok(())
}

/// Mean absolute difference over all points.
pub fn mae(a: &Field, b: &Field) -> Result<f64> {
    same_grid(a, b)?;
    let n = a.values.len() as f64;
    Ok(a.values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

/// Mean squared difference over all points.
pub fn mse(a: &Field, b: &Field) -> Result<f64> {
    same_grid(a, b)?;
    let n = a.values.len() as f64;
    Ok(a.values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

fn can_coarsen(nx: usize, ny: usize) -> bool {
    nx >= 5 && ny >= 5 && (nx - 1) % 2 == 0 && (ny - 1) % 2 == 0
}

/// Near-optimal SOR relaxation factor for the 5-point Laplacian.
fn sor_omega(nx: usize, ny: usize) -> f64 {
    let rho = 0.5
        * ((std::f64::consts::PI / (nx - 1) as f64).cos()
            + (std::f64::consts::PI / (ny - 1) as f64).cos());
    2.0 / (1.0 + (1.0 - rho * rho).sqrt())
}

/// One red-black sweep (both colors) with relaxation factor `omega`.
fn rb_sweep(u: &mut Array2<f64>, f: &Array2<f64>, h: f64, omega: f64) {
    let (nx, ny) = u.dim();
    let h2 = h * h;
    for color in 0..2 {
        for i in 1..nx - 1 {
            let j_start = 1 + (i + 1 + color) % 2;
            let mut j = j_start;
            while j < ny - 1 {
                let gs = 0.25
                    * (u[[i - 1, j]] + u[[i + 1, j]] + u[[i, j - 1]] + u[[i, j + 1]]
                        - h2 * f[[i, j]]);
                u[[i, j]] += omega * (gs - u[[i, j]]);
                j += 2;
            }
        }
    }
}

fn residual_max(u: &Array2<f64>, f: &Array2<f64>, h: f64) -> f64 {
    let (nx, ny) = u.dim();
    let h2 = h * h;
    let mut worst: f64 = 0.0;
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let lap = (u[[i - 1, j]] + u[[i + 1, j]] + u[[i, j - 1]] + u[[i, j + 1]]
                - 4.0 * u[[i, j]])
                / h2;
            worst = worst.max((f[[i, j]] - lap).abs());
        }
    }
    worst
}

/// Interior residual `f - A u`, zero on the boundary ring.
fn residual_field(u: &Array2<f64>, f: &Array2<f64>, h: f64) -> Array2<f64> {
    let (nx, ny) = u.dim();
    let h2 = h * h;
    let mut r = Array2::zeros((nx, ny));
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let lap = (u[[i - 1, j]] + u[[i + 1, j]] + u[[i, j - 1]] + u[[i, j + 1]]
                - 4.0 * u[[i, j]])
                / h2;
            r[[i, j]] = f[[i, j]] - lap;
        }
    }
    r
}

/// Full-weighting restriction onto the half-resolution lattice.
fn restrict(fine: &Array2<f64>) -> Array2<f64> {
    let (nx, ny) = fine.dim();
    let (cx, cy) = ((nx - 1) / 2 + 1, (ny - 1) / 2 + 1);
    let mut coarse = Array2::zeros((cx, cy));
    for ci in 1..cx - 1 {
        for cj in 1..cy - 1 {
            let (i, j) = (2 * ci, 2 * cj);
            coarse[[ci, cj]] = (4.0 * fine[[i, j]]
                + 2.0 * (fine[[i - 1, j]] + fine[[i + 1, j]] + fine[[i, j - 1]] + fine[[i, j + 1]])
                + fine[[i - 1, j - 1]]
                + fine[[i - 1, j + 1]]
                + fine[[i + 1, j - 1]]
                + fine[[i + 1, j + 1]])
                / 16.0;
        }
    }
    coarse
}

/// Bilinear prolongation of the coarse correction, added into the fine grid
/// interior.
fn prolong_add(u: &mut Array2<f64>, coarse: &Array2<f64>) {
    let (nx, ny) = u.dim();
    let at = |ci: i64, cj: i64| -> f64 {
        let (cx, cy) = coarse.dim();
        if ci < 0 || cj < 0 || ci >= cx as i64 || cj >= cy as i64 {
            0.0
        } else {
            coarse[[ci as usize, cj as usize]]
        }
    };
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let (ci, cj) = ((i / 2) as i64, (j / 2) as i64);
            let v = match (i % 2, j % 2) {
                (0, 0) => at(ci, cj),
                (1, 0) => 0.5 * (at(ci, cj) + at(ci + 1, cj)),
                (0, 1) => 0.5 * (at(ci, cj) + at(ci, cj + 1)),
                _ => 0.25 * (at(ci, cj) + at(ci + 1, cj) + at(ci, cj + 1) + at(ci + 1, cj + 1)),
            };
            u[[i, j]] += v;
        }
    }
}

fn vcycle(u: &mut Array2<f64>, f: &Array2<f64>, h: f64) {
    let (nx, ny) = u.dim();
    if !can_coarsen(nx, ny) {
        for _ in 0..COARSEST_SWEEPS {
            rb_sweep(u, f, h, 1.0);
        }
        return;
    }
    for _ in 0..SMOOTH_PRE {
        rb_sweep(u, f, h, 1.0);
    }
    let r = residual_field(u, f, h);
    let rc = restrict(&r);
    let mut ec = Array2::zeros(rc.dim());
    vcycle(&mut ec, &rc, 2.0 * h);
    prolong_add(u, &ec);
    for _ in 0..SMOOTH_POST {
        rb_sweep(u, f, h, 1.0);
    }
}
