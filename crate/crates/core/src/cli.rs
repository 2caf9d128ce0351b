//! Command-line front end. Each subcommand reads a [`RunConfig`], applies
//! flag overrides, and writes its outputs plus the resolved configuration
//! into `--out`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compensation::{audit_trace, simulate_closed_loop, CompensationPolicy, LoopOptions};
use crate::config::{Preset, RunConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{
    equilibrium_error_report, hysteresis_lower_bound, passivity_impulse_test, score_posteriors,
    stiffness_rendering_test, zero_impedance_test,
};
use crate::io::{self, DatasetFile, ModelBundle, Report};
use crate::mixture::{classify_with_models, identify, MixtureState, ModeModels, TrainingSet};
use crate::sim::{run_exploration, PerturbationSignal, SimState};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gpmix", version, about = "Mixture-of-GP actuator identification and passive compensation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the exploration simulator and write a dataset.
    Simulate(Common),
    /// Fit the mode mixture to a dataset and write a model bundle.
    Identify(DataArgs),
    /// Label a dataset with a fitted bundle.
    Classify(ModelArgs),
    /// Run the compensated actuator in closed loop under impacts.
    Compensate(ModelArgs),
    /// Produce evaluation reports.
    Evaluate(EvaluateArgs),
    /// Print version and format versions.
    Version,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Classification,
    ZeroImp,
    Stiffness,
    Passivity,
    Equilibrium,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Exploration preset, used when the configuration names none.
    #[arg(long, value_enum)]
    pub scenario: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Total mode count K, including the disturbance mode.
    #[arg(long = "modes", value_name = "K")]
    pub modes: Option<usize>,
    /// Markov stay probability π.
    #[arg(long)]
    pub pi: Option<f64>,
    /// SEM iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Include sgn(θ̇) as a regression feature.
    #[arg(long, value_enum)]
    pub sgn_feature: Option<Switch>,
    /// Reserve one mode for external disturbances.
    #[arg(long, value_enum)]
    pub disturbance: Option<Switch>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model bundle JSON written by `identify`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset CSV; defaults to a fresh simulation of the configured scenario.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub which: Which,
}

impl Common {
    /// Loads the configuration file and applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_toml(&std::fs::read_to_string(p)?)?,
            None => RunConfig::default(),
        };
        if let (None, Some(p)) = (cfg.preset, self.scenario) {
            cfg.preset = Some(p);
            cfg.exploration = p.exploration();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let id = &mut cfg.identify;
        if let Some(k) = self.modes {
            id.modes = k;
        }
        if let Some(pi) = self.pi {
            id.stay_probability = pi;
        }
        if let Some(n) = self.iters {
            id.iterations = n;
        }
        if let Some(s) = self.sgn_feature {
            id.sign_feature = s.into();
        }
        if let Some(s) = self.disturbance {
            id.disturbance = s.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses arguments, runs the command, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Simulate(c) => simulate(c),
        Command::Identify(a) => identify_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Compensate(a) => compensate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Version => {
            println!(
                "gpmix {} (dataset schema {}, bundle schema {})",
                env!("CARGO_PKG_VERSION"),
                io::DATASET_SCHEMA_VERSION,
                io::BUNDLE_SCHEMA_VERSION
            );
            Ok(())
        }
    }
}

/// Per-command RNG streams derived from the one seed, so that `identify`
/// does not replay the simulator's draws.
fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SIMULATE_STREAM: u64 = 0;
const IDENTIFY_STREAM: u64 = 1;

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(cfg.hash())
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn write_summary<T: Serialize>(out: &Path, command: &str, cfg: &RunConfig, hash: &str, body: T) -> Result<()> {
    io::write_summary(
        out,
        &format!("{command}_summary.json"),
        &Summary {
            command,
            config_hash: hash,
            seed: cfg.seed,
            body,
        },
    )
}

/// Runs the configured exploration and pairs it with the configured layout.
pub fn simulate_dataset(cfg: &RunConfig) -> Result<DatasetFile> {
    let mut rng = rng_for(cfg.seed, SIMULATE_STREAM);
    let dataset = run_exploration(&cfg.exploration, cfg.seed, &mut rng)?;
    Ok(DatasetFile {
        layout: cfg.identify.layout(),
        dataset,
    })
}

fn simulate(c: &Common) -> Result<()> {
    let cfg = c.resolve()?;
    let hash = prepare_out(&cfg, &c.out)?;
    let file = simulate_dataset(&cfg)?;
    io::save_dataset(c.out.join("dataset.csv"), &file)?;
    std::fs::write(c.out.join("scenario.toml"), toml::to_string_pretty(&cfg.exploration)?)?;
    let d = &file.dataset;
    let perturbed_mode = cfg.exploration.perturbed_mode();
    let perturbed = d
        .samples
        .iter()
        .filter(|s| s.truth.is_some_and(|t| t.mode == perturbed_mode))
        .count();
    #[derive(Serialize)]
    struct Body {
        samples: usize,
        perturbed: usize,
        provenance: String,
    }
    write_summary(
        &c.out,
        "simulate",
        &cfg,
        &hash,
        Body {
            samples: d.len(),
            perturbed,
            provenance: d.provenance.label(),
        },
    )?;
    println!("wrote {} samples ({perturbed} perturbed) to {}", d.len(), c.out.display());
    Ok(())
}

/// Fits the configured mixture and packages the result.
pub fn identify_dataset(cfg: &RunConfig, dataset: &Dataset) -> Result<(ModelBundle, Vec<Vec<usize>>)> {
    let layout = cfg.identify.layout();
    let (training, standardizer) = TrainingSet::from_dataset(dataset, layout);
    let mixture = cfg.identify.mixture()?;
    let mut rng = rng_for(cfg.seed, IDENTIFY_STREAM);
    let mut id = identify(&training, &mixture, &cfg.identify.sem_options(), &mut rng)?;
    let label_trace = std::mem::take(&mut id.label_trace);
    let bundle = ModelBundle::new(cfg.hash(), dataset, cfg.seed, standardizer, training, id);
    Ok((bundle, label_trace))
}

fn identify_cmd(a: &DataArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    let file = io::load_dataset(&a.data)?;
    if a.common.sgn_feature.is_none() {
        cfg.identify.sign_feature = file.layout.has_sign();
    }
    let hash = prepare_out(&cfg, &a.common.out)?;
    let (bundle, _) = identify_dataset(&cfg, &file.dataset)?;
    bundle.save(a.common.out.join("model.json"))?;

    let out = &a.common.out;
    let mut r = Report::new(
        std::fs::File::create(out.join("identify_trace.csv"))?,
        &hash,
        &["iteration", "log_likelihood", "changed"],
    )?;
    for rec in &bundle.trace {
        r.row([rec.iteration as f64, rec.log_likelihood, rec.changed as f64])?;
    }
    r.finish()?;
    write_labels(out, &hash, &file.dataset, &bundle.state.labels)?;

    #[derive(Serialize)]
    struct Body<'a> {
        state: &'a MixtureState,
        final_log_likelihood: Option<f64>,
    }
    write_summary(
        out,
        "identify",
        &cfg,
        &hash,
        Body {
            state: &bundle.state,
            final_log_likelihood: bundle.trace.last().map(|r| r.log_likelihood),
        },
    )?;
    println!(
        "identified {} modes over {} samples; bundle at {}",
        bundle.state.mode_count(),
        bundle.training.len(),
        out.join("model.json").display()
    );
    Ok(())
}

fn write_labels(out: &Path, hash: &str, d: &Dataset, labels: &[usize]) -> Result<()> {
    let mut r = Report::new(
        std::fs::File::create(out.join("labels.csv"))?,
        hash,
        &["t", "label", "true_mode"],
    )?;
    for (s, l) in d.samples.iter().zip(labels) {
        let truth = s.truth.map_or(String::new(), |t| t.mode.to_string());
        r.row([s.time.to_string(), l.to_string(), truth])?;
    }
    r.finish()
}

/// Loads the bundle and a dataset (given or simulated) and checks that
/// their feature layouts agree.
fn model_inputs(a: &ModelArgs) -> Result<(RunConfig, ModelBundle, DatasetFile)> {
    let cfg = a.common.resolve()?;
    let bundle = ModelBundle::load(&a.model)?;
    let file = match &a.data {
        Some(p) => io::load_dataset(p)?,
        None => {
            let mut c = cfg.clone();
            c.identify.sign_feature = bundle.layout().has_sign();
            simulate_dataset(&c)?
        }
    };
    if file.layout != bundle.layout() {
        return Err(Error::Schema(format!(
            "dataset layout {:?} does not match bundle layout {:?}",
            file.layout,
            bundle.layout()
        )));
    }
    Ok((cfg, bundle, file))
}

/// Smoothed posteriors for a dataset under a fitted bundle.
pub fn posteriors(bundle: &ModelBundle, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let models = ModeModels::build(&bundle.state, &bundle.training)?;
    let data = TrainingSet::new(bundle.standardizer.transform(dataset), dataset.torques())?;
    classify_with_models(&bundle.state, &models, &data)
}

/// The compensation policy for the configured nominal mode.
pub fn policy(cfg: &RunConfig, bundle: &ModelBundle) -> Result<CompensationPolicy> {
    CompensationPolicy::from_mode(
        &bundle.state,
        cfg.compensate.mode,
        &bundle.training,
        bundle.standardizer.clone(),
        cfg.compensate.impedance,
    )
}

fn classify_cmd(a: &ModelArgs) -> Result<()> {
    let (cfg, bundle, file) = model_inputs(a)?;
    let out = &a.common.out;
    let hash = prepare_out(&cfg, out)?;
    let post = posteriors(&bundle, &file.dataset)?;
    let times: Vec<f64> = file.dataset.samples.iter().map(|s| s.time).collect();
    io::write_posteriors(out, &hash, &times, &post)?;
    let labels: Vec<usize> = post.iter().map(|p| crate::evaluation::argmax(p)).collect();
    write_labels(out, &hash, &file.dataset, &labels)?;
    let mut counts = vec![0usize; bundle.state.mode_count()];
    for &l in &labels {
        counts[l] += 1;
    }
    #[derive(Serialize)]
    struct Body {
        counts: Vec<usize>,
    }
    write_summary(out, "classify", &cfg, &hash, Body { counts: counts.clone() })?;
    println!("label counts {counts:?}");
    Ok(())
}

fn compensate(a: &ModelArgs) -> Result<()> {
    let (cfg, bundle, _) = model_inputs(a)?;
    let out = &a.common.out;
    let hash = prepare_out(&cfg, out)?;
    let policy = policy(&cfg, &bundle)?;
    let plant = &cfg.exploration.actuator;
    let impact = &cfg.evaluate.impact;
    let target = policy.impedance.target;

    let mut r = Report::new(
        std::fs::File::create(out.join("feedforward.csv"))?,
        &hash,
        &["theta", "tau_ff", "potential", "gravity"],
    )?;
    let (lo, hi) = cfg.exploration.range_of_motion;
    for i in 0..=200 {
        let th = lo + (hi - lo) * i as f64 / 200.0;
        r.row([th, policy.feedforward_torque(th), policy.feedforward_potential(th), plant.gravity_torque(th)])?;
    }
    r.finish()?;

    let initial = SimState::at_rest(target);
    let mut signal = PerturbationSignal::new(impact.profile(plant, target)?, cfg.seed);
    let opts = LoopOptions {
        duration: cfg.compensate.duration,
        dt: impact.dt,
        log_rate: impact.log_rate,
        ..LoopOptions::default()
    };
    let dt = opts.dt;
    let damping = impact.environment_damping;
    let trace = simulate_closed_loop(&policy, plant, initial, &opts, |t, s| {
        signal.torque(t, dt) - damping * s.velocity
    })?;
    io::write_trace(out, "compensate_trace.csv", &hash, &[("compensated", &trace)])?;
    let ledger = audit_trace(&trace, policy.available_energy(&initial, plant), impact.tolerance)?;
    io::write_passivity(out, &hash, &ledger)?;
    #[derive(Serialize)]
    struct Body {
        initial_storage: f64,
        min_margin: f64,
        passed: bool,
    }
    write_summary(
        out,
        "compensate",
        &cfg,
        &hash,
        Body {
            initial_storage: ledger.initial_storage,
            min_margin: ledger.min_margin,
            passed: ledger.passed(),
        },
    )?;
    println!(
        "closed loop {:.1} s: S0 {:.4} J, min margin {:.4} J, passive {}",
        cfg.compensate.duration,
        ledger.initial_storage,
        ledger.min_margin,
        ledger.passed()
    );
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (cfg, bundle, file) = model_inputs(&a.model)?;
    let out = &a.model.common.out;
    let hash = prepare_out(&cfg, out)?;
    let plant = &cfg.exploration.actuator;
    let ev = &cfg.evaluate;
    let all = a.which == Which::All;
    let mut summary = serde_json::Map::new();

    if all || a.which == Which::Classification {
        let truth = file
            .dataset
            .truth_modes()
            .ok_or_else(|| Error::InvalidDataset("classification needs truth columns".into()))?;
        let post = posteriors(&bundle, &file.dataset)?;
        let c = score_posteriors(&post, &truth)?;
        io::write_classification(out, &hash, &c)?;
        summary.insert("classification".into(), serde_json::to_value(&c)?);
        println!("classification agreement {:.3}", c.agreement());
    }
    if all || a.which == Which::ZeroImp {
        let mut p = policy(&cfg, &bundle)?;
        p.impedance = crate::compensation::ImpedanceParams::zero();
        let z = zero_impedance_test(&p, plant, &ev.drag)?;
        io::write_zero_impedance(out, &hash, &z)?;
        summary.insert("zero_impedance".into(), serde_json::to_value(&z)?);
        println!(
            "zero impedance rms {:.4} -> {:.4} N·m",
            z.uncompensated.rms_torque, z.compensated.rms_torque
        );
    }
    if all || a.which == Which::Stiffness {
        let p = policy(&cfg, &bundle)?;
        let s = stiffness_rendering_test(&p, plant, &ev.stiffness)?;
        io::write_stiffness(out, &hash, &s)?;
        let mut v = serde_json::to_value(&s)?;
        v["hysteresis_lower_bound"] = hysteresis_lower_bound(plant, p.impedance.stiffness).into();
        summary.insert("stiffness".into(), v);
        println!(
            "stiffness max deviation {:.4} -> {:.4} rad",
            s.uncompensated.max_deviation, s.compensated.max_deviation
        );
    }
    if all || a.which == Which::Passivity {
        let p = policy(&cfg, &bundle)?;
        let rep = passivity_impulse_test(&p, plant, &ev.impact)?;
        io::write_passivity(out, &hash, &rep.ledger)?;
        let mut v = serde_json::to_value(&rep)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("ledger");
            o.insert("initial_storage".into(), rep.ledger.initial_storage.into());
            o.insert("min_margin".into(), rep.ledger.min_margin.into());
            o.insert("passed".into(), rep.passed().into());
        }
        summary.insert("passivity".into(), v);
        println!(
            "passivity S0 {:.4} J, min margin {:.4} J, passed {}",
            rep.ledger.initial_storage,
            rep.ledger.min_margin,
            rep.passed()
        );
    }
    if all || a.which == Which::Equilibrium {
        let eq = &ev.equilibrium;
        let (amp, off) = (eq.amplitude, eq.offset);
        let rows = equilibrium_error_report(|th: f64| amp * th.sin() + off, eq.target, &eq.stiffness)?;
        io::write_equilibrium(out, &hash, &rows)?;
        summary.insert("equilibrium".into(), serde_json::to_value(&rows)?);
        println!("equilibrium sweep over {} stiffness values", rows.len());
    }
    write_summary(out, "evaluate", &cfg, &hash, summary)
}
