//! Stochastic-EM outer loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpHyperparams;

use super::disturbance::fit_disturbance_cov;
use super::gibbs::gibbs_sweep;
use super::likelihood::ModeModels;
use super::optimize::{optimize_hyperparams, OptimizeOptions};
use super::{DisturbanceMode, MixtureConfig, MixtureState, TrainingSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemOptions {
    pub iterations: usize,
    /// Budget for each per-mode kernel-parameter search.
    pub hyper: OptimizeOptions,
    /// Modes with fewer members keep their parameters for the iteration.
    pub min_mode_size: usize,
}

impl Default for SemOptions {
    fn default() -> Self {
        Self {
            iterations: 40,
            hyper: OptimizeOptions {
                max_iterations: 10,
                ..OptimizeOptions::default()
            },
            min_mode_size: 3,
        }
    }
}

/// Summary of one S-step + M-step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Sample log-likelihood `l_{w⁽ⁿ⁾}(D | Θ)` after the M-step.
    pub log_likelihood: f64,
    /// Labels that changed in the sweep.
    pub changed: usize,
    /// Nominal modes whose M-step was skipped for lack of members.
    pub frozen: Vec<usize>,
}

/// Final state and per-iteration trace of an SEM run.
#[derive(Clone, Debug, PartialEq)]
pub struct Identification {
    pub state: MixtureState,
    pub trace: Vec<IterationRecord>,
    /// Label vector after every iteration.
    pub label_trace: Vec<Vec<usize>>,
}

/// Uniform random labels and variance-scaled default kernel parameters
/// `(1, var τ, 0.1 var τ)` in standardized feature units.
pub fn initialize<R: Rng + ?Sized>(data: &TrainingSet, config: &MixtureConfig, rng: &mut R) -> Result<MixtureState> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidDataset("no samples to identify from".into()));
    }
    let var = data.target_variance().max(1e-8);
    let hyper = GpHyperparams::new(1.0, var, 0.1 * var)?;
    let k = config.total_modes();
    let labels = (0..data.len()).map(|_| rng.random_range(0..k)).collect();
    Ok(MixtureState {
        modes: vec![hyper; config.nominal_modes],
        disturbance: config.disturbance.then_some(DisturbanceMode {
            anchor: 0,
            variance: var,
        }),
        stay_probability: config.stay_probability,
        labels,
        iteration: 0,
    })
}

/// `Σ_t log p(τ_t | D_{w_t} \ {t}, Θ_{w_t})` for the state's labels.
pub fn sample_log_likelihood(state: &MixtureState, data: &TrainingSet) -> Result<f64> {
    let models = ModeModels::build(state, data)?;
    let mut total = 0.0;
    for t in 0..data.len() {
        total += models.log_likelihood(t, state.labels[t], state, data)?;
    }
    Ok(total)
}

/// One SEM iteration: a Gibbs sweep, then per-mode parameter search and the
/// disturbance-variance fit on the sampled partition.
pub fn sem_iterate<R: Rng + ?Sized>(
    state: &MixtureState,
    data: &TrainingSet,
    rng: &mut R,
    opts: &SemOptions,
) -> Result<(MixtureState, IterationRecord)> {
    state.validate(data.len())?;
    let sweep = gibbs_sweep(state, data, rng)?;
    let changed = sweep
        .labels
        .iter()
        .zip(&state.labels)
        .filter(|(a, b)| a != b)
        .count();

    let mut next = state.clone();
    next.labels = sweep.labels;
    next.iteration += 1;

    let mut frozen = Vec::new();
    for k in 0..next.nominal_count() {
        let members = next.members(k);
        if members.len() < opts.min_mode_size.max(2) {
            frozen.push(k);
            continue;
        }
        let (x, y) = data.subset(&members);
        // p(w⁽ⁿ⁾ | D, Θ⁽ⁿ⁾) is one constant across the sample; it scales the
        // objective without moving its maximizer.
        next.modes[k] = optimize_hyperparams(&x, &y, next.modes[k], 1.0, &opts.hyper)?;
    }

    let models = ModeModels::build(&next, data)?;
    if let Some(mut dist) = next.disturbance {
        dist.variance = fit_disturbance_cov(&next, data, &models, &sweep.chosen_probability)?;
        next.disturbance = Some(dist);
    }

    let mut log_likelihood = 0.0;
    for t in 0..data.len() {
        log_likelihood += models.log_likelihood(t, next.labels[t], &next, data)?;
    }
    let record = IterationRecord {
        iteration: next.iteration,
        log_likelihood,
        changed,
        frozen,
    };
    Ok((next, record))
}

/// Runs SEM from a random initialization for `opts.iterations` iterations.
pub fn identify<R: Rng + ?Sized>(
    data: &TrainingSet,
    config: &MixtureConfig,
    opts: &SemOptions,
    rng: &mut R,
) -> Result<Identification> {
    if opts.iterations == 0 {
        return Err(Error::InvalidConfig("iteration count must be ≥ 1".into()));
    }
    let mut state = initialize(data, config, rng)?;
    let mut trace = Vec::with_capacity(opts.iterations);
    let mut label_trace = Vec::with_capacity(opts.iterations);
    for _ in 0..opts.iterations {
        let (next, record) = sem_iterate(&state, data, rng, opts)?;
        state = next;
        label_trace.push(state.labels.clone());
        trace.push(record);
    }
    Ok(Identification {
        state,
        trace,
        label_trace,
    })
}
