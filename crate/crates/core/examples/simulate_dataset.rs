//! Simulate the perturbed exploration run and write it as a dataset CSV.
//!
//! `cargo run --example simulate_dataset -- [seed] [out.csv]`

use gpmix::dataset::FeatureLayout;
use gpmix::io::{save_dataset, DatasetFile};
use gpmix::sim::{run_exploration, ExplorationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpmix::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let path = args.next().unwrap_or_else(|| "perturbed.csv".to_owned());

    let cfg = ExplorationConfig::perturbed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dataset = run_exploration(&cfg, seed, &mut rng)?;

    let perturbed = dataset
        .truth_modes()
        .unwrap_or_default()
        .iter()
        .filter(|&&m| m == cfg.perturbed_mode())
        .count();
    println!(
        "{} samples at {} Hz, {} nominal, {} perturbed",
        dataset.len(),
        dataset.sample_rate,
        dataset.len() - perturbed,
        perturbed
    );
    let (lo, hi) = dataset
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.torque), hi.max(s.torque)));
    println!("logged torque spans [{lo:.3}, {hi:.3}] N·m");

    save_dataset(
        &path,
        &DatasetFile {
            layout: FeatureLayout::WithSign,
            dataset,
        },
    )?;
    println!("wrote {path}");
    Ok(())
}
