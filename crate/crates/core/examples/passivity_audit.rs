//! Hit a compensated spring with alternating torque impulses and audit the
//! energy that flows through the interaction port.

use gpmix::compensation::{CompensationPolicy, ImpedanceParams};
use gpmix::dataset::FeatureLayout;
use gpmix::evaluation::{passivity_impulse_test, ImpactOptions};
use gpmix::mixture::{identify, MixtureConfig, SemOptions, TrainingSet};
use gpmix::sim::{run_exploration, ActuatorConfig, ExplorationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpmix::Result<()> {
    let cfg = ExplorationConfig::default();
    let plant = cfg.actuator;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dataset = run_exploration(&cfg, 0, &mut rng)?;
    let (training, standardizer) = TrainingSet::from_dataset(&dataset, FeatureLayout::WithSign);
    let sem = SemOptions {
        iterations: 3,
        ..SemOptions::default()
    };
    let id = identify(&training, &MixtureConfig::from_total_modes(1, false, 0.95)?, &sem, &mut rng)?;
    let mut policy = CompensationPolicy::from_mode(
        &id.state,
        0,
        &training,
        standardizer,
        ImpedanceParams::stiffness(3.5, 0.0),
    )?;

    let opts = ImpactOptions::default();
    let report = passivity_impulse_test(&policy, &plant, &opts)?;
    let l = &report.ledger;
    println!(
        "learned policy: S0 = {:.4} J, min margin = {:.4} J, passive: {}",
        l.initial_storage,
        l.min_margin,
        report.passed()
    );

    // A lightly damped plant under stronger impacts, with the controller
    // injecting twice the plant's viscous loss. The controller is now an
    // energy source and the audit must flag it.
    let variant = ActuatorConfig {
        coulomb: 0.02,
        stribeck_excess: 0.0,
        viscous: 0.5,
        ..plant
    };
    let opts = ImpactOptions {
        environment_damping: 0.2,
        peak: Some(5.0 * plant.breakaway(0.0)),
        ..opts
    };
    policy.viscous_injection = 2.0 * variant.viscous;
    let report = passivity_impulse_test(&policy, &variant, &opts)?;
    println!(
        "with injected energy: min margin = {:.4} J, first violation at {:?} s",
        report.ledger.min_margin, report.ledger.violation
    );
    Ok(())
}
