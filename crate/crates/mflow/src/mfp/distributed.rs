//! The distributed predictor: each rank sweeps the subdomains whose
//! center-line writes touch its owned block, then exchanges the width-m
//! strip inside each owned edge with up to 8 neighbors exactly once per
//! iteration. Received owner data overwrites local halo copies; immediate
//! updates still apply within a rank, so only cross-rank boundary
//! information goes stale between exchanges.

use ndarray::Array2;

use super::predictor::{
    init_state, interior_queries, read_perimeter, sweep, MfpConfig, Mode,
};
use super::solver::SubSolver;
use crate::fabric::{pack_f64s, spawn_world_with, unpack_f64s, Counters, Endpoint, TrafficReport};
use crate::grid::{partition_processors, GridSpec, ProcessorBlock, SubdomainAnchor, CLASS_ORDER};
use crate::oracle::Field;
use crate::{Error, Result};

const TAG_HALO: u32 = 17;

/// Result of a distributed run (taken from rank 0; all ranks assemble the
/// same field).
#[derive(Debug)]
pub struct DistributedOutcome {
    pub field: Field,
    pub iterations: usize,
    pub converged: bool,
    /// Global max line-value change at each convergence check.
    pub deltas: Vec<f64>,
    pub traffic: TrafficReport,
}

/// Anchors this rank evaluates: those whose written center lines intersect
/// the owned block, i.e. anchors in the block extended by m/2 on the low
/// sides.
fn local_classes(
    block: &ProcessorBlock,
    schedule_classes: [&[SubdomainAnchor]; 4],
    m: usize,
) -> [Vec<SubdomainAnchor>; 4] {
    let half = m / 2;
    let keep = |a: &SubdomainAnchor| {
        a.i0 + half >= block.i_range.0
            && a.i0 < block.i_range.1
            && a.j0 + half >= block.j_range.0
            && a.j0 < block.j_range.1
    };
    std::array::from_fn(|ci| {
        schedule_classes[ci]
            .iter()
            .filter(|a| keep(a))
            .copied()
            .collect()
    })
}

/// The rectangle of points `sender` contributes to `receiver`'s halo: the
/// receiver's halo ring clipped to the sender's owned block. Empty for
/// non-adjacent pairs.
fn exchange_rect(
    grid: &GridSpec,
    sender: &ProcessorBlock,
    receiver: &ProcessorBlock,
    m: usize,
) -> Option<((usize, usize), (usize, usize))> {
    let ext_i = (
        receiver.i_range.0.saturating_sub(m),
        (receiver.i_range.1 + m).min(grid.nx),
    );
    let ext_j = (
        receiver.j_range.0.saturating_sub(m),
        (receiver.j_range.1 + m).min(grid.ny),
    );
    let i_lo = ext_i.0.max(sender.i_range.0);
    let i_hi = ext_i.1.min(sender.i_range.1);
    let j_lo = ext_j.0.max(sender.j_range.0);
    let j_hi = ext_j.1.min(sender.j_range.1);
    if i_lo >= i_hi || j_lo >= j_hi {
        None
    } else {
        Some(((i_lo, i_hi), (j_lo, j_hi)))
    }
}

/// Line-lattice points of a rectangle in deterministic row-major order.
fn line_points(
    rect: ((usize, usize), (usize, usize)),
    half: usize,
) -> Vec<(usize, usize)> {
    let ((i_lo, i_hi), (j_lo, j_hi)) = rect;
    let mut pts = Vec::new();
    for j in j_lo..j_hi {
        for i in i_lo..i_hi {
            if i % half == 0 || j % half == 0 {
                pts.push((i, j));
            }
        }
    }
    pts
}

/// Runs the distributed predictor on a freshly spawned world of `p` ranks.
pub fn run_distributed(
    p: usize,
    grid: &GridSpec,
    m: usize,
    boundary: &[f64],
    solver: &dyn SubSolver,
    config: &MfpConfig,
) -> Result<DistributedOutcome> {
    let world = spawn_world_with(p, std::time::Duration::from_secs(120))?;
    run_distributed_on(world, grid, m, boundary, solver, config)
}

/// Runs the distributed predictor over an existing fabric world.
pub fn run_distributed_on(
    world: Vec<Endpoint>,
    grid: &GridSpec,
    m: usize,
    boundary: &[f64],
    solver: &dyn SubSolver,
    config: &MfpConfig,
) -> Result<DistributedOutcome> {
    config.validate()?;
    let p = world.len();
    let blocks = partition_processors(grid, p, m)?;
    if boundary.len() != grid.perimeter_len() {
        return Err(Error::shape(format!(
            "global boundary has {} values, perimeter needs {}",
            boundary.len(),
            grid.perimeter_len()
        )));
    }
    let results: Vec<Result<Option<DistributedOutcome>>> = std::thread::scope(|s| {
        let handles: Vec<_> = world
            .into_iter()
            .map(|ep| {
                let blocks = &blocks;
                s.spawn(move || rank_loop(ep, grid, blocks, m, boundary, solver, config))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rank thread panicked"))
            .collect()
    });
    let mut outcome = None;
    for r in results {
        if let Some(o) = r? {
            outcome = Some(o);
        }
    }
    outcome.ok_or_else(|| Error::Transport("rank 0 produced no outcome".to_string()))
}

fn rank_loop(
    mut ep: Endpoint,
    grid: &GridSpec,
    blocks: &[ProcessorBlock],
    m: usize,
    boundary: &[f64],
    solver: &dyn SubSolver,
    config: &MfpConfig,
) -> Result<Option<DistributedOutcome>> {
    let rank = ep.rank();
    let me = &blocks[rank];
    let half = m / 2;
    let mut state = init_state(grid, m, boundary)?;
    let schedule_classes: [&[SubdomainAnchor]; 4] =
        std::array::from_fn(|ci| state.schedule.class(CLASS_ORDER[ci]));
    let classes = local_classes(me, schedule_classes, m);

    // Precompute exchange point lists with every neighbor, both directions.
    let mut send_pts: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    let mut recv_pts: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for &nb in &me.neighbors {
        if let Some(rect) = exchange_rect(grid, me, &blocks[nb], m) {
            send_pts.push((nb, line_points(rect, half)));
        }
        if let Some(rect) = exchange_rect(grid, &blocks[nb], me, m) {
            recv_pts.push((nb, line_points(rect, half)));
        }
    }

    let owns = |i: usize, j: usize| blocks[rank].owns(i, j);
    let mut deltas_checked = Vec::new();
    let mut window_delta: f64 = 0.0;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut traffic_rows: Vec<(u64, u64, u64)> = Vec::new();
    let mut last = ep.counters;

    for it in 0..config.max_iters {
        let d = sweep(&mut state, solver, config.mode, &classes, &owns)?;
        window_delta = window_delta.max(d);
        iterations = it + 1;

        // One exchange per iteration: owner strips overwrite neighbor halos.
        for (nb, pts) in &send_pts {
            let vals: Vec<f64> = pts.iter().map(|&(i, j)| state.field.values[[i, j]]).collect();
            ep.send(*nb, TAG_HALO, &pack_f64s(&vals))?;
        }
        for (nb, pts) in &recv_pts {
            let vals = unpack_f64s(&ep.recv(*nb, TAG_HALO)?);
            if vals.len() != pts.len() {
                return Err(Error::Transport(format!(
                    "halo from rank {nb} carries {} values, expected {}",
                    vals.len(),
                    pts.len()
                )));
            }
            for (&(i, j), v) in pts.iter().zip(vals) {
                state.field.values[[i, j]] = v;
            }
        }
        let now = ep.counters;
        traffic_rows.push((
            it as u64,
            now.messages_sent - last.messages_sent,
            now.bytes_sent - last.bytes_sent,
        ));
        last = now;

        if (it + 1) % config.check_every == 0 {
            let gathered = ep.all_gather(&window_delta.to_le_bytes())?;
            let global = gathered
                .iter()
                .map(|b| f64::from_le_bytes(b.as_slice().try_into().unwrap()))
                .fold(0.0f64, f64::max);
            deltas_checked.push(global);
            window_delta = 0.0;
            if global <= config.epsilon {
                converged = true;
                break;
            }
        }
    }

    // Final phase: fill the interiors of owned atomic subdomains.
    let (local_pts, queries) = interior_queries(m);
    let atomic: Vec<SubdomainAnchor> = classes[0]
        .iter()
        .filter(|a| me.owns(a.i0, a.j0))
        .copied()
        .collect();
    let solved: Vec<Vec<f64>> = match config.mode {
        Mode::Batched => {
            let perims: Vec<Vec<f64>> = atomic
                .iter()
                .map(|a| read_perimeter(&state.field, a))
                .collect();
            if perims.is_empty() {
                Vec::new()
            } else {
                solver.solve_many(&perims, &queries)?
            }
        }
        Mode::Sequential => atomic
            .iter()
            .map(|a| solver.solve(&read_perimeter(&state.field, a), &queries))
            .collect::<Result<_>>()?,
    };
    for (a, vals) in atomic.iter().zip(solved) {
        for ((di, dj), v) in local_pts.iter().zip(vals) {
            state.field.values[[a.i0 + di, a.j0 + dj]] = v;
        }
    }

    // Gather owned rectangles and average where contributions overlap
    // (owner-rank assembly makes every count exactly one).
    let mut mine = Vec::new();
    for j in me.j_range.0..me.j_range.1 {
        for i in me.i_range.0..me.i_range.1 {
            mine.push(state.field.values[[i, j]]);
        }
    }
    let gathered = ep.all_gather(&pack_f64s(&mine))?;
    let mut sum = Array2::<f64>::zeros((grid.nx, grid.ny));
    let mut count = Array2::<f64>::zeros((grid.nx, grid.ny));
    for (r, bytes) in gathered.iter().enumerate() {
        let vals = unpack_f64s(bytes);
        let b = &blocks[r];
        let mut k = 0;
        for j in b.j_range.0..b.j_range.1 {
            for i in b.i_range.0..b.i_range.1 {
                sum[[i, j]] += vals[k];
                count[[i, j]] += 1.0;
                k += 1;
            }
        }
    }
    let mut assembled = Field::zeros(*grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = count[[i, j]];
            assembled.values[[i, j]] = if c > 0.0 { sum[[i, j]] / c } else { 0.0 };
        }
    }

    // Traffic report on rank 0.
    let mut packed = Vec::with_capacity(traffic_rows.len() * 24 + 48);
    let c = ep.counters;
    for v in [
        c.messages_sent,
        c.bytes_sent,
        c.messages_received,
        c.bytes_received,
        c.allreduce_calls,
        c.allgather_calls,
    ] {
        packed.extend_from_slice(&v.to_le_bytes());
    }
    for (it, msgs, bytes) in &traffic_rows {
        packed.extend_from_slice(&it.to_le_bytes());
        packed.extend_from_slice(&msgs.to_le_bytes());
        packed.extend_from_slice(&bytes.to_le_bytes());
    }
    let traffic_blobs = ep.all_gather(&packed)?;
    if rank != 0 {
        return Ok(None);
    }
    let mut traffic = TrafficReport::default();
    for (r, blob) in traffic_blobs.iter().enumerate() {
        let words: Vec<u64> = blob
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        traffic.per_rank.push(Counters {
            messages_sent: words[0],
            bytes_sent: words[1],
            messages_received: words[2],
            bytes_received: words[3],
            allreduce_calls: words[4],
            allgather_calls: words[5],
        });
        for row in words[6..].chunks_exact(3) {
            traffic
                .per_iteration
                .push((r, row[0] as usize, row[1], row[2]));
        }
    }
    Ok(Some(DistributedOutcome {
        field: assembled,
        iterations,
        converged,
        deltas: deltas_checked,
        traffic,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::mfp::predictor::run;
    use crate::mfp::solver::OracleSolver;
    use crate::oracle::{mae, solve_dirichlet};

    fn unit_grid(n: usize) -> GridSpec {
        build_grid(n, n, 1.0 / (n - 1) as f64, (0.0, 0.0)).unwrap()
    }

    fn wavy_boundary(grid: &GridSpec) -> Vec<f64> {
        grid.perimeter()
            .into_iter()
            .map(|(i, j)| {
                let (x, y) = grid.point(i, j);
                (2.5 * x).sin() * (1.0 + 0.4 * y) + 0.3 * (3.0 * (x + y)).cos()
            })
            .collect()
    }

    #[test]
    fn p1_is_bit_identical_to_serial_run() {
        let g = unit_grid(17);
        let m = 4;
        let bc = wavy_boundary(&g);
        let solver = OracleSolver::new(m);
        let cfg = MfpConfig {
            epsilon: 1e-8,
            max_iters: 300,
            ..MfpConfig::default()
        };
        let mut state = init_state(&g, m, &bc).unwrap();
        let (serial_field, serial_report) = run(&mut state, &solver, &cfg).unwrap();
        let dist = run_distributed(1, &g, m, &bc, &solver, &cfg).unwrap();
        assert_eq!(dist.iterations, serial_report.iterations);
        assert_eq!(dist.converged, serial_report.converged);
        for (a, b) in dist.field.values.iter().zip(serial_field.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(dist.traffic.per_rank[0].messages_sent, 0);
    }

    #[test]
    fn p4_converges_and_matches_global_oracle() {
        let g = unit_grid(33);
        let m = 8;
        let bc = wavy_boundary(&g);
        let solver = OracleSolver::new(m);
        let cfg = MfpConfig {
            epsilon: 1e-7,
            max_iters: 400,
            ..MfpConfig::default()
        };
        let dist = run_distributed(4, &g, m, &bc, &solver, &cfg).unwrap();
        assert!(dist.converged, "deltas: {:?}", dist.deltas.last());
        let (global, _) = solve_dirichlet(&g, &bc, 1e-11, 300).unwrap();
        let err = mae(&dist.field, &global).unwrap();
        assert!(err <= 1e-3, "MAE vs global oracle {err}");
    }

    #[test]
    fn distributed_and_serial_limits_agree() {
        let g = unit_grid(33);
        let m = 8;
        let bc = wavy_boundary(&g);
        let solver = OracleSolver::new(m);
        let cfg = MfpConfig {
            epsilon: 1e-7,
            max_iters: 400,
            ..MfpConfig::default()
        };
        let mut state = init_state(&g, m, &bc).unwrap();
        let (serial_field, _) = run(&mut state, &solver, &cfg).unwrap();
        let dist = run_distributed(4, &g, m, &bc, &solver, &cfg).unwrap();
        let err = mae(&dist.field, &serial_field).unwrap();
        assert!(err <= 1e-2, "serial/distributed disagreement {err}");
    }

    #[test]
    fn interior_rank_sends_eight_messages_per_iteration() {
        // 6x6 atomic subdomains over a 3x3 rank grid; rank 4 is interior.
        let g = unit_grid(25);
        let m = 4;
        let bc = wavy_boundary(&g);
        let solver = OracleSolver::new(m);
        let cfg = MfpConfig {
            epsilon: 0.0,
            max_iters: 3,
            check_every: 1,
            ..MfpConfig::default()
        };
        let dist = run_distributed(9, &g, m, &bc, &solver, &cfg).unwrap();
        let iters = dist.iterations as u64;
        assert_eq!(dist.traffic.per_rank[4].messages_sent, 8 * iters);
        // Corner rank sends 3, edge rank sends 5.
        assert_eq!(dist.traffic.per_rank[0].messages_sent, 3 * iters);
        assert_eq!(dist.traffic.per_rank[1].messages_sent, 5 * iters);
        // Per-iteration rows recorded for every rank.
        let rank4_rows: Vec<_> = dist
            .traffic
            .per_iteration
            .iter()
            .filter(|(r, _, _, _)| *r == 4)
            .collect();
        assert_eq!(rank4_rows.len(), dist.iterations);
        for (_, _, msgs, _) in rank4_rows {
            assert_eq!(*msgs, 8);
        }
    }

    #[test]
    fn exchange_rects_cover_halo_ring() {
        let g = unit_grid(25);
        let blocks = partition_processors(&g, 9, 4).unwrap();
        let m = 4;
        // Rank 4's halo ring must be covered exactly once by its neighbors'
        // send rectangles.
        let me = &blocks[4];
        let mut covered = std::collections::HashMap::new();
        for &nb in &me.neighbors {
            if let Some(rect) = exchange_rect(&g, &blocks[nb], me, m) {
                for p in line_points(rect, 2) {
                    *covered.entry(p).or_insert(0) += 1;
                }
            }
        }
        let ((ilo, ihi), (jlo, jhi)) = me.with_halo(&g);
        for j in jlo..=jhi {
            for i in ilo..=ihi {
                let in_block = me.owns(i, j);
                let on_line = i % 2 == 0 || j % 2 == 0;
                if !in_block && on_line {
                    assert_eq!(covered.get(&(i, j)), Some(&1), "point ({i},{j})");
                }
            }
        }
    }
}
