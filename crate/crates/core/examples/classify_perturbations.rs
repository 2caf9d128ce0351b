//! Fit on one perturbed run, then label a second run from a different seed
//! and score the labels against the simulator's truth.

use gpmix::dataset::FeatureLayout;
use gpmix::evaluation::score_posteriors;
use gpmix::mixture::{classify_with_models, identify, MixtureConfig, ModeModels, SemOptions, TrainingSet};
use gpmix::sim::{run_exploration, ExplorationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpmix::Result<()> {
    let cfg = ExplorationConfig::perturbed();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train = run_exploration(&cfg, 1, &mut rng)?;
    let test = run_exploration(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(2))?;

    let (training, standardizer) = TrainingSet::from_dataset(&train, FeatureLayout::WithSign);
    let mixture = MixtureConfig::from_total_modes(2, true, 0.95)?;
    let id = identify(&training, &mixture, &SemOptions::default(), &mut rng)?;

    let models = ModeModels::build(&id.state, &training)?;
    let fresh = TrainingSet::new(standardizer.transform(&test), test.torques())?;
    let posteriors = classify_with_models(&id.state, &models, &fresh)?;

    let truth = test.truth_modes().expect("simulated data carries truth");
    let c = score_posteriors(&posteriors, &truth)?;
    println!("rows: true mode, columns: predicted mode");
    for row in &c.counts {
        println!("{row:?}");
    }
    println!("nominal kept nominal: {:.1}%", 100.0 * c.rate(0, 0));
    println!("perturbed missed:     {:.1}%", 100.0 * c.rate(1, 0));
    Ok(())
}
