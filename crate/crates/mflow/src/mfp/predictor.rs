//! Serial/batched Mosaic Flow predictor: the Schwarz-style iteration over
//! parity classes and the final full-field assembly.

use ndarray::Array2;

use super::solver::SubSolver;
use crate::grid::{enumerate_anchors, GridSpec, SubdomainAnchor, SubdomainSchedule, CLASS_ORDER};
use crate::oracle::Field;
use crate::{Error, Result};

/// Execution mode of one class sweep: `Sequential` solves subdomains one at
/// a time, `Batched` sends the whole class through the solver in one call.
/// Members of a class never read each other's writes, so the two modes
/// produce identical updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Batched,
}

/// Predictor controls: iteration budget `t`, convergence threshold on the
/// max absolute line-value change per iteration, the cadence of distributed
/// convergence checks, the sweep mode, and the benchmark MAE stop threshold.
#[derive(Debug, Clone, Copy)]
pub struct MfpConfig {
    pub max_iters: usize,
    pub epsilon: f64,
    pub check_every: usize,
    pub mode: Mode,
    pub threshold_mae: Option<f64>,
}

impl Default for MfpConfig {
    fn default() -> Self {
        MfpConfig {
            max_iters: 500,
            epsilon: 1e-8,
            check_every: 1,
            mode: Mode::Batched,
            threshold_mae: Some(0.05),
        }
    }
}

impl MfpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("iteration budget must be >= 1".to_string()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.check_every == 0 {
            return Err(Error::invalid("check_every must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Iteration state: the full value field (only `m/2`-lattice line points are
/// read or written during iterations) plus the anchor schedule.
#[derive(Debug, Clone)]
pub struct PredictorState {
    pub grid: GridSpec,
    pub field: Field,
    pub schedule: SubdomainSchedule,
    pub iteration: usize,
}

/// Zeroes the interior and writes the global Dirichlet data on the grid
/// perimeter. The boundary values never change afterwards.
pub fn init_state(grid: &GridSpec, m: usize, boundary: &[f64]) -> Result<PredictorState> {
    if boundary.len() != grid.perimeter_len() {
        return Err(Error::shape(format!(
            "global boundary has {} values, perimeter needs {}",
            boundary.len(),
            grid.perimeter_len()
        )));
    }
    let schedule = enumerate_anchors(grid, m)?;
    let mut field = Field::zeros(*grid);
    for (k, (i, j)) in grid.perimeter().into_iter().enumerate() {
        field.values[[i, j]] = boundary[k];
    }
    Ok(PredictorState {
        grid: *grid,
        field,
        schedule,
        iteration: 0,
    })
}

/// Local-lattice offsets and normalized query coordinates of the
/// center-line points every subdomain predicts.
pub(crate) fn center_queries(m: usize) -> (Vec<(usize, usize)>, Array2<f64>) {
    let proto = SubdomainAnchor { i0: 0, j0: 0, m };
    let pts = proto.center_lines().unique_points();
    let mut queries = Array2::zeros((pts.len(), 2));
    for (r, (i, j)) in pts.iter().enumerate() {
        queries[[r, 0]] = *i as f64 / m as f64;
        queries[[r, 1]] = *j as f64 / m as f64;
    }
    (pts, queries)
}

/// Normalized query coordinates of all `(m-1)^2` interior points, matching
/// `SubdomainAnchor::interior_points` order.
pub(crate) fn interior_queries(m: usize) -> (Vec<(usize, usize)>, Array2<f64>) {
    let proto = SubdomainAnchor { i0: 0, j0: 0, m };
    let pts = proto.interior_points();
    let mut queries = Array2::zeros((pts.len(), 2));
    for (r, (i, j)) in pts.iter().enumerate() {
        queries[[r, 0]] = *i as f64 / m as f64;
        queries[[r, 1]] = *j as f64 / m as f64;
    }
    (pts, queries)
}

pub(crate) fn read_perimeter(field: &Field, anchor: &SubdomainAnchor) -> Vec<f64> {
    anchor
        .perimeter()
        .into_iter()
        .map(|(i, j)| field.values[[i, j]])
        .collect()
}

/// One sweep over the given per-class anchor lists. Classes see the updates
/// of earlier classes within the same sweep; within a class the subdomains
/// are solved from the same pre-class state in both modes. The max absolute
/// change is taken over written points accepted by `count_delta` (the
/// distributed runner restricts it to owned points).
pub(crate) fn sweep(
    state: &mut PredictorState,
    solver: &dyn SubSolver,
    mode: Mode,
    classes: &[Vec<SubdomainAnchor>; 4],
    count_delta: &dyn Fn(usize, usize) -> bool,
) -> Result<f64> {
    let m = state.schedule.m;
    if solver.side_cells() != m {
        return Err(Error::shape(format!(
            "solver handles {} cells, schedule uses {m}",
            solver.side_cells()
        )));
    }
    let (local_pts, queries) = center_queries(m);
    let mut max_delta: f64 = 0.0;
    for (ci, class) in CLASS_ORDER.iter().enumerate() {
        let anchors = &classes[ci];
        if anchors.is_empty() {
            continue;
        }
        match mode {
            Mode::Batched => {
                let perims: Vec<Vec<f64>> = anchors
                    .iter()
                    .map(|a| read_perimeter(&state.field, a))
                    .collect();
                let solved = solver.solve_many(&perims, &queries).map_err(|e| {
                    Error::Numerical(format!("class {class:?} batched solve failed: {e}"))
                })?;
                for (a, vals) in anchors.iter().zip(solved) {
                    max_delta =
                        max_delta.max(write_center_lines(state, a, &local_pts, &vals, count_delta));
                }
            }
            Mode::Sequential => {
                for a in anchors {
                    let perim = read_perimeter(&state.field, a);
                    let vals = solver.solve(&perim, &queries).map_err(|e| {
                        Error::Numerical(format!("anchor ({}, {}) solve failed: {e}", a.i0, a.j0))
                    })?;
                    max_delta =
                        max_delta.max(write_center_lines(state, a, &local_pts, &vals, count_delta));
                }
            }
        }
    }
    state.iteration += 1;
    Ok(max_delta)
}

/// One full sweep over every parity class of the schedule. Returns the max
/// absolute change over all written line values.
pub fn iterate_once(
    state: &mut PredictorState,
    solver: &dyn SubSolver,
    mode: Mode,
) -> Result<f64> {
    let classes: [Vec<SubdomainAnchor>; 4] = std::array::from_fn(|ci| {
        state.schedule.class(CLASS_ORDER[ci]).to_vec()
    });
    sweep(state, solver, mode, &classes, &|_, _| true)
}

fn write_center_lines(
    state: &mut PredictorState,
    anchor: &SubdomainAnchor,
    local_pts: &[(usize, usize)],
    vals: &[f64],
    count_delta: &dyn Fn(usize, usize) -> bool,
) -> f64 {
    let mut delta: f64 = 0.0;
    for ((di, dj), v) in local_pts.iter().zip(vals) {
        let (i, j) = (anchor.i0 + di, anchor.j0 + dj);
        if count_delta(i, j) {
            delta = delta.max((state.field.values[[i, j]] - v).abs());
        }
        state.field.values[[i, j]] = *v;
    }
    delta
}

/// Per-run record: per-iteration max deltas and the convergence verdict.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub iterations: usize,
    pub converged: bool,
    pub deltas: Vec<f64>,
}

impl RunReport {
    /// Solve-report CSV: `iteration,max_delta`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,max_delta\n");
        for (k, d) in self.deltas.iter().enumerate() {
            out.push_str(&format!("{},{d:.6e}\n", k + 1));
        }
        out
    }
}

/// Fills the interiors of every atomic (class `(0,0)`) subdomain from the
/// converged line values.
pub fn final_assembly(
    state: &mut PredictorState,
    solver: &dyn SubSolver,
    mode: Mode,
) -> Result<()> {
    let m = state.schedule.m;
    let (local_pts, queries) = interior_queries(m);
    let anchors: Vec<SubdomainAnchor> = state.schedule.class((0, 0)).to_vec();
    let solved: Vec<Vec<f64>> = match mode {
        Mode::Batched => {
            let perims: Vec<Vec<f64>> = anchors
                .iter()
                .map(|a| read_perimeter(&state.field, a))
                .collect();
            solver.solve_many(&perims, &queries)?
        }
        Mode::Sequential => anchors
            .iter()
            .map(|a| solver.solve(&read_perimeter(&state.field, a), &queries))
            .collect::<Result<_>>()?,
    };
    for (a, vals) in anchors.iter().zip(solved) {
        for ((di, dj), v) in local_pts.iter().zip(vals) {
            state.field.values[[a.i0 + di, a.j0 + dj]] = v;
        }
    }
    Ok(())
}

/// Runs the predictor: iterates until the max line-value change drops to
/// `epsilon` or the budget runs out (reported, not fatal), then solves every
/// atomic subdomain for all its interior points to assemble the full field.
pub fn run(
    state: &mut PredictorState,
    solver: &dyn SubSolver,
    config: &MfpConfig,
) -> Result<(Field, RunReport)> {
    config.validate()?;
    let mut deltas = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let d = iterate_once(state, solver, config.mode)?;
        deltas.push(d);
        if d <= config.epsilon {
            converged = true;
            break;
        }
    }
    final_assembly(state, solver, config.mode)?;
    let report = RunReport {
        iterations: deltas.len(),
        converged,
        deltas,
    };
    Ok((state.field.clone(), report))
}
