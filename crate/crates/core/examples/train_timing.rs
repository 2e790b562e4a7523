//! Times dataset assembly and boosting on a general-case scenario.
//!
//! `cargo run --release --example train_timing -- <tracks> <steps> <rounds>`

use std::time::Instant;

use slf_core::gbt::{ColumnIndex, TrainParams, Trainer};
use slf_core::preprocess::build_dataset;
use slf_core::simkit::{simulate_tracks, ScenarioConfig};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let (n_tracks, steps, rounds) = (args.first().copied().unwrap_or(2000), args.get(1).copied().unwrap_or(50), args.get(2).copied().unwrap_or(10));
    let cfg = ScenarioConfig { n_tracks, steps, seed: 1, ..ScenarioConfig::default() };
    let t0 = Instant::now();
    let tracks = simulate_tracks(&cfg).unwrap();
    let ds = build_dataset(&tracks, 20).unwrap();
    println!("samples {} built in {:?}", ds.len(), t0.elapsed());
    let t1 = Instant::now();
    let trainer = Trainer::new(&ds.features);
    println!("column index in {:?}, {} present entries", t1.elapsed(), ColumnIndex::build(&ds.features).n_present());
    let params = TrainParams { nrounds: rounds, max_depth: 8, eta: 0.05, ..TrainParams::default() };
    let t2 = Instant::now();
    let out = trainer.fit(&ds.target_component(0), &params).unwrap();
    let el = t2.elapsed();
    println!("{rounds} rounds in {:?} ({:?}/tree), final rmse {:.4}", el, el / rounds as u32, out.final_mse().sqrt());
}
