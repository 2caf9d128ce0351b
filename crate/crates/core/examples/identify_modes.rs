//! Stochastic EM on the perturbed scenario with one nominal mode and one
//! disturbance mode.

use gpmix::mixture::{identify, MixtureConfig, SemOptions, TrainingSet};
use gpmix::dataset::FeatureLayout;
use gpmix::sim::{run_exploration, ExplorationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpmix::Result<()> {
    let seed = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dataset = run_exploration(&ExplorationConfig::perturbed(), seed, &mut rng)?;
    let (training, _) = TrainingSet::from_dataset(&dataset, FeatureLayout::WithSign);

    let mixture = MixtureConfig::from_total_modes(2, true, 0.95)?;
    let id = identify(&training, &mixture, &SemOptions::default(), &mut rng)?;

    for rec in id.trace.iter().step_by(5) {
        println!(
            "iteration {:2}: log-likelihood {:9.3}, {} labels changed",
            rec.iteration, rec.log_likelihood, rec.changed
        );
    }
    let s = &id.state;
    for (k, h) in s.modes.iter().enumerate() {
        println!(
            "mode {k}: l = {:.3}, σ_y = {:.4}, σ_n = {:.5}, {} samples",
            h.length_scale(),
            h.signal_variance(),
            h.noise_variance(),
            s.members(k).len()
        );
    }
    if let (Some(d), Some(label)) = (s.disturbance, s.disturbance_label()) {
        println!("disturbance: Σ_d = {:.4}, {} samples", d.variance, s.members(label).len());
    }
    Ok(())
}
