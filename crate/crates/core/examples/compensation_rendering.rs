//! Learn the nominal torque model, then compare rendered zero impedance and
//! a soft spring with and without the learned feedforward.

use gpmix::compensation::{CompensationPolicy, ImpedanceParams};
use gpmix::dataset::FeatureLayout;
use gpmix::evaluation::{
    hysteresis_lower_bound, stiffness_rendering_test, zero_impedance_test, DragOptions, StiffnessOptions,
};
use gpmix::mixture::{identify, MixtureConfig, SemOptions, TrainingSet};
use gpmix::sim::{run_exploration, ExplorationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpmix::Result<()> {
    let cfg = ExplorationConfig::default();
    let plant = cfg.actuator;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dataset = run_exploration(&cfg, 0, &mut rng)?;
    let (training, standardizer) = TrainingSet::from_dataset(&dataset, FeatureLayout::WithSign);
    let mixture = MixtureConfig::from_total_modes(1, false, 0.95)?;
    let sem = SemOptions {
        iterations: 3,
        ..SemOptions::default()
    };
    let id = identify(&training, &mixture, &sem, &mut rng)?;

    let zero = CompensationPolicy::from_mode(&id.state, 0, &training, standardizer.clone(), ImpedanceParams::zero())?;
    println!("θ      τ_ff    gravity");
    for th in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        println!("{th:5.2} {:7.3} {:7.3}", zero.feedforward_torque(th), plant.gravity_torque(th));
    }

    let z = zero_impedance_test(&zero, &plant, &DragOptions::default())?;
    println!(
        "drag RMS torque {:.3} -> {:.3} N·m (ratio {:.2})",
        z.uncompensated.rms_torque,
        z.compensated.rms_torque,
        z.compensated.rms_torque / z.uncompensated.rms_torque
    );

    let k = 3.5;
    let spring = CompensationPolicy::from_mode(&id.state, 0, &training, standardizer, ImpedanceParams::stiffness(k, 0.0))?;
    let s = stiffness_rendering_test(&spring, &plant, &StiffnessOptions::default())?;
    println!(
        "spring K = {k}: max deviation {:.3} -> {:.3} rad, hysteresis {:.3} -> {:.3} rad (friction floor {:.3})",
        s.uncompensated.max_deviation,
        s.compensated.max_deviation,
        s.uncompensated.hysteresis_width,
        s.compensated.hysteresis_width,
        hysteresis_lower_bound(&plant, k)
    );
    Ok(())
}
