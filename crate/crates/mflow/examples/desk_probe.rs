//! Scratch timing probe for the desk training configuration.

use std::time::Instant;

use mflow::boundary::{generate_dataset, SobolBox};
use mflow::sdnet::{SdnetConfig, SdnetModel};
use mflow::train::{parallel_train_step, OptState, TrainConfig};
use mflow::train::parallel::{build_worker_batch, validation_mse};

fn main() {
    let m = 32;
    let t0 = Instant::now();
    let records = generate_dataset(200, m, &SobolBox::default(), 7).unwrap();
    println!("generate 200 records: {:.2?} ({:.2?}/record)", t0.elapsed(), t0.elapsed() / 200);

    let net = SdnetConfig::desk(m);
    let mut model = SdnetModel::init(net).unwrap();
    println!("params: {}", model.num_params());
    let mut opt = OptState::new(&model);
    let cfg = TrainConfig::default();
    let mut world = mflow::fabric::spawn_world(1).unwrap();

    let idx: Vec<usize> = (0..16).collect();
    let batch = build_worker_batch(&records, &idx, &cfg, 0);
    // Warm up.
    parallel_train_step(&mut world[0], &mut model, &mut opt, &batch, 1e-3, &cfg).unwrap();
    let t1 = Instant::now();
    let reps = 5;
    for k in 0..reps {
        let batch = build_worker_batch(&records, &idx, &cfg, k + 1);
        parallel_train_step(&mut world[0], &mut model, &mut opt, &batch, 1e-3, &cfg).unwrap();
    }
    let per_iter = t1.elapsed() / reps as u32;
    println!("train step (16 domains x 64+64 pts): {per_iter:.2?}");

    let val_idx: Vec<usize> = (150..200).collect();
    let t2 = Instant::now();
    let v = validation_mse(&model, &records, &val_idx).unwrap();
    println!("validation over 50 records: {:.2?} (mse {v:.3e})", t2.elapsed());

    // Projection for the desk acceptance run: 1800 train records.
    let iters_per_epoch = 1800 / 16;
    let val_scale = 200.0 / 50.0;
    let epoch = per_iter * iters_per_epoch as u32 + t2.elapsed().mul_f64(val_scale);
    println!("projected desk epoch (1800 rec, val 200): {epoch:.2?}");
}
