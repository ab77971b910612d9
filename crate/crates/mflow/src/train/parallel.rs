//! The data-parallel training step with exact SGD semantics, and the epoch
//! loop. Per iteration each worker runs a data forward/backward and a
//! collocation forward/backward into one gradient buffer, then a single
//! allreduce averages the buffers and every worker applies the identical
//! optimizer step.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lamb::{optimizer_step, OptState};
use super::loss::LossBreakdown;
use super::{lr_at, scale_for_workers, TrainConfig};
use crate::boundary::DatasetRecord;
use crate::fabric::{spawn_world_with, Endpoint};
use crate::sdnet::{
    backward_data, backward_pde, forward_stack, forward_values, laplacian_stack, SdnetConfig,
    SdnetModel, SdnetParams,
};
use crate::{Error, Result};

/// One worker's shard for one iteration.
#[derive(Debug, Clone)]
pub struct WorkerBatch {
    pub boundaries: Vec<Vec<f64>>,
    pub data_points: Vec<Array2<f64>>,
    pub data_targets: Vec<Vec<f64>>,
    pub colloc_points: Vec<Array2<f64>>,
}

/// Deterministic per-(seed, epoch, record) stream so point sampling does not
/// depend on which worker draws a record.
fn point_seed(seed: u64, epoch: usize, record: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (epoch as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (record as u64 + 1).wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// Samples data points (random grid points with oracle values) and interior
/// collocation points for each record in the shard.
pub fn build_worker_batch(
    records: &[DatasetRecord],
    indices: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> WorkerBatch {
    let q = cfg.points_per_subdomain;
    let mut batch = WorkerBatch {
        boundaries: Vec::with_capacity(indices.len()),
        data_points: Vec::with_capacity(indices.len()),
        data_targets: Vec::with_capacity(indices.len()),
        colloc_points: Vec::with_capacity(indices.len()),
    };
    for &idx in indices {
        let rec = &records[idx];
        let m = rec.m();
        let mut rng = ChaCha8Rng::seed_from_u64(point_seed(cfg.seed, epoch, idx));
        let mut pts = Array2::zeros((q, 2));
        let mut targets = Vec::with_capacity(q);
        for r in 0..q {
            let i = rng.gen_range(0..=m);
            let j = rng.gen_range(0..=m);
            pts[[r, 0]] = i as f64 / m as f64;
            pts[[r, 1]] = j as f64 / m as f64;
            targets.push(rec.solution_at(i, j) as f64);
        }
        let mut colloc = Array2::zeros((q, 2));
        for r in 0..q {
            for c in 0..2 {
                let mut v: f64 = rng.gen_range(0.0..1.0);
                while v == 0.0 {
                    v = rng.gen_range(0.0..1.0);
                }
                colloc[[r, c]] = v;
            }
        }
        batch.boundaries.push(rec.boundary.iter().map(|v| *v as f64).collect());
        batch.data_points.push(pts);
        batch.data_targets.push(targets);
        batch.colloc_points.push(colloc);
    }
    batch
}

/// Result of one synchronized step: this worker's local loss values and the
/// post-allreduce gradient every worker applied.
pub struct StepResult {
    pub losses: LossBreakdown,
    pub grad: Vec<f64>,
}

fn params_hash(params: &SdnetParams) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for v in params.flatten() {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// One Algorithm-style training iteration: data forward/backward, then
/// collocation forward/backward accumulated into the same gradient buffer,
/// then exactly one allreduce-mean, then the identical optimizer step on
/// every worker. Replica divergence after the step is fatal.
pub fn parallel_train_step(
    ep: &mut Endpoint,
    model: &mut SdnetModel,
    opt: &mut OptState,
    batch: &WorkerBatch,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<StepResult> {
    let boundaries: Vec<&[f64]> = batch.boundaries.iter().map(Vec::as_slice).collect();

    // Data term.
    let (cache, out) = forward_stack(model, &boundaries, &batch.data_points)?;
    let flat_targets: Vec<f64> = batch.data_targets.iter().flatten().copied().collect();
    let n_data = flat_targets.len().max(1);
    let mut data_loss = 0.0;
    let dout = ndarray::Array1::from_iter(out.iter().zip(&flat_targets).map(|(o, t)| {
        let r = o - t;
        data_loss += r * r;
        2.0 * r / n_data as f64
    }));
    data_loss /= n_data as f64;
    let mut grads = backward_data(model, &cache, &dout);
    drop(cache);

    // PDE term, accumulated onto the same buffer.
    let (jet_cache, lap) = laplacian_stack(model, &boundaries, &batch.colloc_points)?;
    let n_colloc = lap.len().max(1);
    let mut pde_loss = 0.0;
    let dlap = ndarray::Array1::from_iter(lap.iter().map(|l| {
        pde_loss += l * l;
        2.0 * cfg.lambda_pde * l / n_colloc as f64
    }));
    pde_loss /= n_colloc as f64;
    let pde_grads = backward_pde(model, &jet_cache, &dlap);
    drop(jet_cache);
    grads.axpy(1.0, &pde_grads);

    // Single synchronization point.
    let reduced = ep.allreduce_mean(&grads.flatten())?;

    let mut theta = model.params.flatten();
    optimizer_step(&mut theta, &reduced, opt, lr, cfg.weight_decay, cfg.optimizer)?;
    model.params.assign_flat(&theta)?;

    // Replicas must stay bit-identical.
    let hash = params_hash(&model.params);
    let hashes = ep.all_gather(&hash.to_le_bytes())?;
    for (r, h) in hashes.iter().enumerate() {
        let theirs = u64::from_le_bytes(h.as_slice().try_into().unwrap());
        if theirs != hash {
            return Err(Error::Numerical(format!(
                "replica divergence after step: rank {} hash {hash:#018x}, rank {r} hash {theirs:#018x}",
                ep.rank()
            )));
        }
    }

    Ok(StepResult {
        losses: LossBreakdown {
            data: data_loss,
            pde: pde_loss,
            total: data_loss + cfg.lambda_pde * pde_loss,
        },
        grad: reduced,
    })
}

/// Full-grid validation MSE over the held-out records, evaluated in chunks.
pub fn validation_mse(model: &SdnetModel, records: &[DatasetRecord], idx: &[usize]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(8) {
        let mut boundaries = Vec::with_capacity(chunk.len());
        let mut points = Vec::with_capacity(chunk.len());
        let mut targets: Vec<f64> = Vec::new();
        for &k in chunk {
            let rec = &records[k];
            let m = rec.m();
            let mut pts = Array2::zeros(((m + 1) * (m + 1), 2));
            for j in 0..=m {
                for i in 0..=m {
                    let r = j * (m + 1) + i;
                    pts[[r, 0]] = i as f64 / m as f64;
                    pts[[r, 1]] = j as f64 / m as f64;
                    targets.push(rec.solution_at(i, j) as f64);
                }
            }
            boundaries.push(rec.boundary.iter().map(|v| *v as f64).collect::<Vec<f64>>());
            points.push(pts);
        }
        let refs: Vec<&[f64]> = boundaries.iter().map(Vec::as_slice).collect();
        let out = forward_values(model, &refs, &points)?;
        for (o, t) in out.iter().zip(&targets) {
            sum += (o - t) * (o - t);
        }
        count += out.len();
    }
    if count == 0 {
        return Err(Error::invalid("empty validation set".to_string()));
    }
    Ok(sum / count as f64)
}

/// Everything the caller needs from a training run.
pub struct TrainOutput {
    /// Best-validation checkpoint.
    pub model: SdnetModel,
    /// Validation MSE after each epoch.
    pub val_curve: Vec<f64>,
    /// CSV log: epoch,iter,lr,data_loss,pde_loss,val_mse,wall_seconds.
    pub log_csv: String,
    /// CSV: rank,iteration,allreduce_calls,msgs,bytes (per-iteration deltas).
    pub traffic_csv: String,
}

fn shuffled(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((epoch as u64 + 1) * 0x9E37_79B9));
    order.shuffle(&mut rng);
    order
}

/// Trains SDNet on the dataset with `p` data-parallel workers. The dataset
/// is split 90/10 into train/validation; the single-worker recipe in `cfg`
/// is adjusted via [`scale_for_workers`]. Returns the best-validation model
/// and the per-epoch validation curve.
pub fn train(
    records: &[DatasetRecord],
    net: SdnetConfig,
    cfg: &TrainConfig,
    p: usize,
) -> Result<TrainOutput> {
    cfg.validate()?;
    net.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("empty dataset".to_string()));
    }
    let m = records[0].m();
    if records.iter().any(|r| r.m() != m) {
        return Err(Error::invalid("dataset mixes subdomain sizes".to_string()));
    }
    if net.m != m {
        return Err(Error::invalid(format!(
            "dataset has m={m}, model config has m={}",
            net.m
        )));
    }

    // 90/10 split on a seeded shuffle.
    let mut all: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_5B17);
    all.shuffle(&mut rng);
    let n_val = (records.len() / 10).max(1);
    if records.len() <= n_val {
        return Err(Error::invalid("dataset too small to split".to_string()));
    }
    let (val_idx, train_idx) = all.split_at(n_val);

    if train_idx.len() < p {
        return Err(Error::invalid(format!(
            "{} training records cannot feed {p} workers",
            train_idx.len()
        )));
    }
    let per_worker = cfg.batch_domains.min(train_idx.len() / p).max(1);
    let iters_per_epoch = (train_idx.len() / (per_worker * p)).max(1);
    let total_iters = cfg.epochs * iters_per_epoch;
    let cfg_scaled = scale_for_workers(cfg, p);

    let world = spawn_world_with(p, std::time::Duration::from_secs(120))?;
    let mut outputs: Vec<Option<TrainOutput>> = Vec::new();
    let results: Vec<Result<Option<TrainOutput>>> = std::thread::scope(|s| {
        let handles: Vec<_> = world
            .into_iter()
            .map(|ep| {
                let net = net.clone();
                s.spawn(move || {
                    worker_loop(
                        ep,
                        records,
                        train_idx,
                        val_idx,
                        net,
                        cfg,
                        &cfg_scaled,
                        per_worker,
                        iters_per_epoch,
                        total_iters,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    for r in results {
        outputs.push(r?);
    }
    outputs
        .into_iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::Numerical("rank 0 produced no output".to_string()))
}

#[allow(clippy::too_many_arguments)]
fn worker_loop(
    mut ep: Endpoint,
    records: &[DatasetRecord],
    train_idx: &[usize],
    val_idx: &[usize],
    net: SdnetConfig,
    cfg: &TrainConfig,
    cfg_scaled: &TrainConfig,
    per_worker: usize,
    iters_per_epoch: usize,
    total_iters: usize,
) -> Result<Option<TrainOutput>> {
    let rank = ep.rank();
    let p = ep.world();
    let mut model = SdnetModel::init(net)?;
    let mut opt = OptState::new(&model);
    let start = Instant::now();
    let mut log = String::from("epoch,iter,lr,data_loss,pde_loss,val_mse,wall_seconds\n");
    let mut val_curve = Vec::new();
    let mut best: Option<(f64, SdnetModel)> = None;
    let mut traffic_rows: Vec<(usize, u64, u64, u64)> = Vec::new();
    let mut last = ep.counters;
    let mut last_val = f64::NAN;
    let mut global_iter = 0usize;

    for epoch in 0..cfg.epochs {
        let order = shuffled(train_idx, cfg.seed, epoch);
        for b in 0..iters_per_epoch {
            let base = b * per_worker * p;
            let mine = &order[base + rank * per_worker..base + (rank + 1) * per_worker];
            let batch = build_worker_batch(records, mine, cfg, epoch);
            let lr = lr_at(cfg_scaled, global_iter, total_iters);
            let step = parallel_train_step(&mut ep, &mut model, &mut opt, &batch, lr, cfg)?;
            let now = ep.counters;
            traffic_rows.push((
                global_iter,
                now.allreduce_calls - last.allreduce_calls,
                now.messages_sent - last.messages_sent,
                now.bytes_sent - last.bytes_sent,
            ));
            last = now;
            if rank == 0 {
                log.push_str(&format!(
                    "{epoch},{global_iter},{lr:.8},{:.6e},{:.6e},{},{:.3}\n",
                    step.losses.data,
                    step.losses.pde,
                    if last_val.is_nan() {
                        String::new()
                    } else {
                        format!("{last_val:.6e}")
                    },
                    start.elapsed().as_secs_f64()
                ));
            }
            global_iter += 1;
        }
        if rank == 0 {
            let val = validation_mse(&model, records, val_idx)?;
            val_curve.push(val);
            last_val = val;
            if best.as_ref().map(|(b, _)| val < *b).unwrap_or(true) {
                best = Some((val, model.clone()));
            }
        }
    }

    // Collect per-rank traffic on rank 0.
    let mut packed = Vec::new();
    for (iter, ar, msgs, bytes) in &traffic_rows {
        packed.extend_from_slice(&(*iter as u64).to_le_bytes());
        packed.extend_from_slice(&ar.to_le_bytes());
        packed.extend_from_slice(&msgs.to_le_bytes());
        packed.extend_from_slice(&bytes.to_le_bytes());
    }
    let gathered = ep.all_gather(&packed)?;
    if rank != 0 {
        return Ok(None);
    }
    let mut traffic_csv = String::from("rank,iteration,allreduce_calls,msgs,bytes\n");
    for (r, block) in gathered.iter().enumerate() {
        for row in block.chunks_exact(32) {
            let iter = u64::from_le_bytes(row[0..8].try_into().unwrap());
            let ar = u64::from_le_bytes(row[8..16].try_into().unwrap());
            let msgs = u64::from_le_bytes(row[16..24].try_into().unwrap());
            let bytes = u64::from_le_bytes(row[24..32].try_into().unwrap());
            traffic_csv.push_str(&format!("{r},{iter},{ar},{msgs},{bytes}\n"));
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok(Some(TrainOutput {
        model: best_model,
        val_curve,
        log_csv: log,
        traffic_csv,
    }))
}
