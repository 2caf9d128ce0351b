//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its verdict line; exits non-zero if any criterion fails.

use std::time::Instant;

use gpmix::compensation::{CompensationPolicy, ImpedanceParams};
use gpmix::dataset::{Dataset, FeatureLayout, Provenance, Sample, Standardizer};
use gpmix::evaluation::{
    equilibrium_error_report, hysteresis_lower_bound, passivity_impulse_test, score_classification,
    stiffness_rendering_test, zero_impedance_test, DragOptions, ImpactOptions, StiffnessOptions,
};
use gpmix::gp::{GpHyperparams, GpModel};
use gpmix::mixture::{classify, identify, MixtureConfig, SemOptions, TrainingSet};
use gpmix::sim::{friction_torque, run_exploration, step, ActuatorConfig, ExplorationConfig, SimState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Verdicts {
    failed: Vec<String>,
}

impl Verdicts {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_owned());
        }
    }

    fn info(&self, id: &str, detail: String) {
        println!("[INFO] {id}: {detail}");
    }
}

fn kernel(a: &[f64], b: &[f64], h: &GpHyperparams) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    h.signal_variance() * (-d2 / h.length_scale().powi(2)).exp()
}

fn gram_inverse(xs: &[Vec<f64>], h: &GpHyperparams) -> DMatrix<f64> {
    let n = xs.len();
    DMatrix::from_fn(n, n, |i, j| kernel(&xs[i], &xs[j], h) + if i == j { h.noise_variance() } else { 0.0 })
        .try_inverse()
        .expect("gram matrix is invertible")
}

fn random_gp_problem(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<Vec<f64>>, Vec<f64>, GpHyperparams) {
    let n = rng.random_range(2..=max_n);
    let dim = rng.random_range(1..=4);
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let ys = xs
        .iter()
        .map(|x| x.iter().map(|v| (1.3 * v).sin()).sum::<f64>() + rng.random_range(-0.2..0.2))
        .collect();
    let h = GpHyperparams::new(
        rng.random_range(0.2..3.0),
        rng.random_range(0.1..5.0),
        rng.random_range(1e-3..0.5),
    )
    .expect("valid hyperparameters");
    (xs, ys, h)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn criterion_1(v: &mut Verdicts) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (xs, ys, h) = random_gp_problem(&mut rng, 200);
        let gp = GpModel::fit(&xs, &ys, h).expect("fit");
        let inv = gram_inverse(&xs, &h);
        let alpha = &inv * DVector::from_column_slice(&ys);
        let queries: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..xs[0].len()).map(|_| rng.random_range(-3.5..3.5)).collect())
            .collect();
        let (mut m, mut md, mut s, mut sd) = (vec![], vec![], vec![], vec![]);
        for q in &queries {
            let p = gp.posterior(q).expect("posterior");
            let k = DVector::from_iterator(xs.len(), xs.iter().map(|x| kernel(q, x, &h)));
            m.push(p.mean);
            md.push(k.dot(&alpha));
            s.push(p.variance);
            sd.push(h.signal_variance() + h.noise_variance() - (k.transpose() * &inv * &k)[0]);
        }
        worst = worst.max(rel_err(&m, &md)).max(rel_err(&s, &sd));
    }
    let secs = start.elapsed().as_secs_f64();
    v.record(
        "criterion 1 (GP vs dense inverse)",
        worst <= 1e-8 && secs <= 30.0,
        format!("100 datasets, worst rel. err {worst:.2e} (≤ 1e-8), {secs:.1} s (≤ 30 s)"),
    );
}

fn criterion_2(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let (xs, ys, h) = random_gp_problem(&mut rng, 50);
        let gp = GpModel::fit(&xs, &ys, h).expect("fit");
        let closed = gp.loo_log_likelihood().expect("loo");
        let mut brute = 0.0;
        for i in 0..xs.len() {
            let mut rx = xs.clone();
            let mut ry = ys.clone();
            let xi = rx.remove(i);
            ry.remove(i);
            let inv = gram_inverse(&rx, &h);
            let k = DVector::from_iterator(rx.len(), rx.iter().map(|x| kernel(&xi, x, &h)));
            let mean = (k.transpose() * &inv * DVector::from_column_slice(&ry))[0];
            let var = h.signal_variance() + h.noise_variance() - (k.transpose() * &inv * &k)[0];
            brute -= (ys[i] - mean).powi(2) / var;
        }
        worst = worst.max((closed - brute).abs() / brute.abs());
    }
    v.record(
        "criterion 2 (hold-one-out vs refit)",
        worst <= 1e-8,
        format!("30 datasets of ≤ 50 samples, worst rel. err {worst:.2e} (≤ 1e-8)"),
    );
}

fn criterion_3(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(20..80);
        let samples: Vec<Sample> = (0..n)
            .map(|i| {
                let th: f64 = rng.random_range(-1.2..1.2);
                let vel: f64 = rng.random_range(-0.5..0.5);
                let acc: f64 = rng.random_range(-1.0..1.0);
                Sample {
                    time: i as f64 * 0.05,
                    position: th,
                    velocity: vel,
                    acceleration: acc,
                    sign: 0,
                    torque: 0.73 * acc + 2.5 * th.sin() + 0.05 * vel + rng.random_range(-0.05..0.05),
                    truth: None,
                }
            })
            .collect();
        let d = Dataset::new(20.0, Provenance::External, samples).expect("dataset");
        let std = Standardizer::fit(&d, FeatureLayout::Nominal);
        let h = GpHyperparams::new(
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..5.0),
            rng.random_range(0.01..0.2),
        )
        .expect("hyperparameters");
        let gp = GpModel::fit(&std.transform(&d), &d.torques(), h).expect("fit");
        let policy = CompensationPolicy::new(gp, std, ImpedanceParams::zero()).expect("policy");
        let e = 1e-5;
        for _ in 0..50 {
            let th = rng.random_range(-1.5..1.5);
            let fd = (policy.feedforward_potential(th + e) - policy.feedforward_potential(th - e)) / (2.0 * e);
            worst = worst.max((fd - policy.feedforward_torque(th)).abs());
        }
    }
    v.record(
        "criterion 3 (storage gradient = feedforward)",
        worst <= 1e-6,
        format!("10 models x 50 positions, worst abs. err {worst:.2e} (≤ 1e-6)"),
    );
}

fn criterion_4(v: &mut Verdicts) {
    let cfg = ExplorationConfig::perturbed();
    let mixture = MixtureConfig::from_total_modes(2, true, 0.95).expect("mixture");
    let mut passing = 0;
    let mut in_band = 0;
    let mut slowest: f64 = 0.0;
    for seed in 0..10u64 {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = run_exploration(&cfg, seed, &mut rng).expect("simulate");
        let (ts, _) = TrainingSet::from_dataset(&d, FeatureLayout::WithSign);
        let id = identify(&ts, &mixture, &SemOptions::default(), &mut rng).expect("identify");
        let post = classify(&id.state, &ts).expect("classify");
        let truth = d.truth_modes().expect("truth");
        let disturbance = id.state.disturbance_label().expect("disturbance mode");
        let (mut nominal, mut kept, mut perturbed, mut missed) = (0, 0, 0, 0);
        for (p, &t) in post.iter().zip(&truth) {
            let flagged = p[disturbance] > 0.5;
            if t == 0 {
                nominal += 1;
                kept += usize::from(!flagged);
            } else {
                perturbed += 1;
                missed += usize::from(!flagged);
            }
        }
        let correct = kept as f64 / nominal as f64;
        let miss = missed as f64 / perturbed as f64;
        let ok = correct >= 0.8 && miss <= 0.2;
        passing += usize::from(ok);
        in_band += usize::from((correct - 0.817).abs() <= 0.10 && (miss - 0.152).abs() <= 0.10);
        let secs = start.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        println!(
            "        seed {seed}: {kept}/{nominal} nominal kept ({:.1}%), {missed}/{perturbed} perturbed missed ({:.1}%), {secs:.1} s{}",
            100.0 * correct,
            100.0 * miss,
            if ok { "" } else { "  <- below threshold" }
        );
    }
    v.record(
        "criterion 4 (perturbation classification)",
        passing >= 8 && slowest <= 600.0,
        format!("{passing}/10 seeds with ≥ 80% nominal kept and ≤ 20% missed (need ≥ 8), slowest seed {slowest:.1} s"),
    );
    v.info(
        "criterion 4 band",
        format!("{in_band}/10 seeds within ±10 pp of 81.7% kept / 15.2% missed"),
    );
}

fn criterion_5(v: &mut Verdicts) {
    let cfg = ExplorationConfig::payload();
    let mixture = MixtureConfig::from_total_modes(2, false, 0.95).expect("mixture");
    let mut agreements = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = run_exploration(&cfg, seed, &mut rng).expect("simulate");
        let (ts, _) = TrainingSet::from_dataset(&d, FeatureLayout::WithSign);
        let id = identify(&ts, &mixture, &SemOptions::default(), &mut rng).expect("identify");
        let c = score_classification(&id.state.labels, &d.truth_modes().expect("truth")).expect("score");
        agreements.push(c.agreement());
    }
    let hits = agreements.iter().filter(|&&a| a >= 0.95).count();
    let listed: Vec<String> = agreements.iter().map(|a| format!("{:.0}%", 100.0 * a)).collect();
    v.record(
        "criterion 5 (payload mode recovery)",
        hits == 10,
        format!("{hits}/10 seeds with ≥ 95% agreement (need 10): [{}]", listed.join(", ")),
    );

    // The same algorithm on a plain two-function synthetic problem, once with
    // i.i.d. inputs and once with inputs swept along a trajectory as in any
    // actuator log.
    for swept in [false, true] {
        let mut synth = Vec::new();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let noise = Normal::new(0.0, 0.1).expect("normal");
            let n = 240;
            let truth: Vec<usize> = (0..n).map(|t| (t / 40) % 2).collect();
            let inputs: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    if swept {
                        vec![3.0 * (2.0 * std::f64::consts::PI * t as f64 / 60.0).sin()]
                    } else {
                        vec![rng.random_range(-3.0..3.0)]
                    }
                })
                .collect();
            let targets = inputs
                .iter()
                .zip(&truth)
                .map(|(x, &m)| x[0].sin() + m as f64 + noise.sample(&mut rng))
                .collect();
            let ts = TrainingSet::new(inputs, targets).expect("training set");
            let opts = SemOptions {
                iterations: 50,
                ..SemOptions::default()
            };
            let id = identify(&ts, &mixture, &opts, &mut rng).expect("identify");
            synth.push(score_classification(&id.state.labels, &truth).expect("score").agreement());
        }
        let listed: Vec<String> = synth.iter().map(|a| format!("{:.0}%", 100.0 * a)).collect();
        v.info(
            "criterion 5 synthetic",
            format!(
                "sin x vs sin x + 1 (noise 0.1), {} inputs, {}/10 seeds ≥ 95%: [{}]",
                if swept { "swept" } else { "i.i.d." },
                synth.iter().filter(|&&a| a >= 0.95).count(),
                listed.join(", ")
            ),
        );
    }
}

/// Nominal model learned from the unperturbed exploration run.
struct Learned {
    plant: ActuatorConfig,
    training: TrainingSet,
    standardizer: Standardizer,
    state: gpmix::mixture::MixtureState,
}

impl Learned {
    fn new() -> Self {
        let cfg = ExplorationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = run_exploration(&cfg, 0, &mut rng).expect("simulate");
        let (training, standardizer) = TrainingSet::from_dataset(&d, FeatureLayout::WithSign);
        let mixture = MixtureConfig::from_total_modes(1, false, 0.95).expect("mixture");
        let opts = SemOptions {
            iterations: 3,
            ..SemOptions::default()
        };
        let state = identify(&training, &mixture, &opts, &mut rng).expect("identify").state;
        Self {
            plant: cfg.actuator,
            training,
            standardizer,
            state,
        }
    }

    fn policy(&self, impedance: ImpedanceParams) -> CompensationPolicy {
        CompensationPolicy::from_mode(&self.state, 0, &self.training, self.standardizer.clone(), impedance)
            .expect("policy")
    }
}

fn criterion_6(v: &mut Verdicts, l: &Learned) {
    let z = zero_impedance_test(&l.policy(ImpedanceParams::zero()), &l.plant, &DragOptions::default()).expect("drag");
    let ratio = z.compensated.rms_torque / z.uncompensated.rms_torque;
    v.record(
        "criterion 6 (zero-impedance rendering)",
        ratio <= 0.3,
        format!(
            "RMS port torque {:.3} -> {:.3} N·m at 0.1 rad/s, ratio {ratio:.3} (≤ 0.3)",
            z.uncompensated.rms_torque, z.compensated.rms_torque
        ),
    );
}

fn criterion_7(v: &mut Verdicts, l: &Learned) {
    let k = 3.5;
    let s = stiffness_rendering_test(&l.policy(ImpedanceParams::stiffness(k, 0.0)), &l.plant, &StiffnessOptions::default())
        .expect("stiffness");
    let (u, c) = (s.uncompensated, s.compensated);
    v.record(
        "criterion 7 (stiffness rendering K = 3.5)",
        c.max_deviation < u.max_deviation && c.hysteresis_width > 0.0,
        format!(
            "max deviation {:.4} -> {:.4} rad, hysteresis {:.4} -> {:.4} rad (compensated > 0; friction floor {:.4})",
            u.max_deviation,
            c.max_deviation,
            u.hysteresis_width,
            c.hysteresis_width,
            hysteresis_lower_bound(&l.plant, k)
        ),
    );
}

fn criterion_8(v: &mut Verdicts, l: &Learned) {
    let mut policy = l.policy(ImpedanceParams::stiffness(3.5, 0.0));
    let opts = ImpactOptions::default();
    let rep = passivity_impulse_test(&policy, &l.plant, &opts).expect("impacts");
    let extracted = rep.ledger.max_extracted().max(0.0);

    // Lightly damped plant, stronger impacts, and a controller that injects
    // twice the plant's viscous loss.
    let variant = ActuatorConfig {
        coulomb: 0.02,
        stribeck_excess: 0.0,
        viscous: 0.5,
        ..l.plant
    };
    let adversarial = ImpactOptions {
        environment_damping: 0.2,
        peak: Some(5.0 * l.plant.breakaway(0.0)),
        ..opts
    };
    policy.viscous_injection = 2.0 * variant.viscous;
    let neg = passivity_impulse_test(&policy, &variant, &adversarial).expect("negative control");
    v.record(
        "criterion 8 (passivity audit)",
        rep.passed() && !neg.passed(),
        format!(
            "{:.0} s impulse train: extracted ≤ {extracted:.2e} J vs S0 {:.2e} J + 1e-3, min margin {:.2e} J; negative control {} (min margin {:.3e} J)",
            opts.duration,
            rep.ledger.initial_storage,
            rep.ledger.min_margin,
            if neg.passed() { "NOT flagged" } else { "flagged" },
            neg.ledger.min_margin
        ),
    );
}

fn criterion_9(v: &mut Verdicts) {
    let pendulum = ActuatorConfig {
        gravity_amplitude: 2.5,
        ..ActuatorConfig::ideal(0.73)
    };
    let mut s = SimState::at_rest(1.2);
    let e0 = pendulum.mechanical_energy(&s);
    let mut drift: f64 = 0.0;
    for _ in 0..100_000 {
        s = step(&s, 0.0, 0.0, 1e-4, &pendulum).expect("step");
        drift = drift.max((pendulum.mechanical_energy(&s) - e0).abs() / e0);
    }

    let plant = ActuatorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut max_power = f64::NEG_INFINITY;
    for _ in 0..1_000_000 {
        let vel = rng.random_range(-10.0..10.0);
        let th = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let applied = rng.random_range(-20.0..20.0);
        max_power = max_power.max(friction_torque(vel, th, applied, &plant) * vel);
    }

    let mut held = true;
    for &(th, frac) in &[(0.0, 0.99), (0.7, -0.99), (-1.2, 0.9), (1.4, 0.5)] {
        let hold = plant.gravity_torque(th) + frac * plant.breakaway(th);
        let mut s = SimState::at_rest(th);
        for _ in 0..100_000 {
            s = step(&s, hold, 0.0, 1e-3, &plant).expect("step");
        }
        held &= s.position == th && s.velocity == 0.0;
    }
    v.record(
        "criterion 9 (simulator physics)",
        drift <= 1e-3 && max_power <= 0.0 && held,
        format!(
            "pendulum drift {:.2e}% over 10 s (≤ 0.1%), max friction power {max_power:.2e} W over 10^6 states (≤ 0), stiction held 100 s: {held}",
            100.0 * drift
        ),
    );
}

fn criterion_10(v: &mut Verdicts) {
    let stiffness: Vec<f64> = (0..=20).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
    let mut worst: f64 = 0.0;
    for c in [-0.7, 0.05, 0.3, 1.5] {
        let rows = equilibrium_error_report(|_| c, 0.8, &stiffness).expect("constant error");
        for r in rows {
            worst = worst.max((r.deflection - c / r.stiffness).abs() / (c / r.stiffness).abs());
        }
    }
    let rows = equilibrium_error_report(|th: f64| 0.5 * th.sin(), 0.8, &stiffness).expect("sinusoidal error");
    let monotone = rows.windows(2).all(|w| w[1].deflection.abs() <= w[0].deflection.abs());
    let converged = rows.iter().all(|r| r.converged);
    v.record(
        "criterion 10 (equilibrium error)",
        worst <= 1e-10 && monotone && converged,
        format!(
            "constant error rel. err {worst:.2e} (≤ 1e-10); sinusoidal deflection {:.4} -> {:.6} rad, monotone: {monotone}",
            rows[0].deflection,
            rows[rows.len() - 1].deflection
        ),
    );
}

fn main() {
    let mut v = Verdicts { failed: Vec::new() };
    let start = Instant::now();
    criterion_1(&mut v);
    criterion_2(&mut v);
    criterion_3(&mut v);
    criterion_4(&mut v);
    criterion_5(&mut v);
    let learned = Learned::new();
    criterion_6(&mut v, &learned);
    criterion_7(&mut v, &learned);
    criterion_8(&mut v, &learned);
    criterion_9(&mut v);
    criterion_10(&mut v);
    println!("acceptance finished in {:.0} s", start.elapsed().as_secs_f64());
    if v.failed.is_empty() {
        println!("all criteria passed");
    } else {
        println!("failed: {}", v.failed.join(", "));
        std::process::exit(1);
    }
}
