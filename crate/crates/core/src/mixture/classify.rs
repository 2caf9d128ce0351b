//! Per-sample mode posteriors by forward-backward over the label chain.

use crate::error::Result;

use super::gibbs::softmax;
use super::likelihood::ModeModels;
use super::{MixtureState, TrainingSet};

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Marginal posteriors `p(w_t = k | emissions)` for a chain with uniform
/// initial distribution and the `π / (1−π)` link factors.
///
/// `log_emissions[t][k]` is `log p(τ_t | w_t = k)`.
pub fn forward_backward(log_emissions: &[Vec<f64>], stay_probability: f64) -> Vec<Vec<f64>> {
    let n = log_emissions.len();
    if n == 0 {
        return Vec::new();
    }
    let k = log_emissions[0].len();
    let stay = stay_probability.ln();
    let switch = (1.0 - stay_probability).ln();
    let link = |a: usize, b: usize| if a == b { stay } else { switch };

    let mut fwd = vec![vec![0.0; k]; n];
    for j in 0..k {
        fwd[0][j] = -(k as f64).ln() + log_emissions[0][j];
    }
    for t in 1..n {
        for j in 0..k {
            let terms: Vec<f64> = (0..k).map(|i| fwd[t - 1][i] + link(i, j)).collect();
            fwd[t][j] = log_sum_exp(&terms) + log_emissions[t][j];
        }
    }
    let mut bwd = vec![vec![0.0; k]; n];
    for t in (0..n - 1).rev() {
        for i in 0..k {
            let terms: Vec<f64> = (0..k)
                .map(|j| link(i, j) + log_emissions[t + 1][j] + bwd[t + 1][j])
                .collect();
            bwd[t][i] = log_sum_exp(&terms);
        }
    }
    (0..n)
        .map(|t| {
            let lp: Vec<f64> = (0..k).map(|j| fwd[t][j] + bwd[t][j]).collect();
            softmax(&lp)
        })
        .collect()
}

/// Mode posteriors for the training data under a fitted state, with
/// leave-one-out emissions relative to the state's own labels.
pub fn classify(state: &MixtureState, data: &TrainingSet) -> Result<Vec<Vec<f64>>> {
    state.validate(data.len())?;
    let models = ModeModels::build(state, data)?;
    let emissions = (0..data.len())
        .map(|t| models.log_likelihoods(t, state, data))
        .collect::<Result<Vec<_>>>()?;
    Ok(forward_backward(&emissions, state.stay_probability))
}

/// Mode posteriors for new data (not part of the training set), scored
/// against models fitted on the training labels.
pub fn classify_with_models(state: &MixtureState, models: &ModeModels, data: &TrainingSet) -> Result<Vec<Vec<f64>>> {
    let mut emissions = Vec::with_capacity(data.len());
    for t in 0..data.len() {
        let mut row = Vec::with_capacity(state.mode_count());
        for k in 0..state.mode_count() {
            let post = models.model(state.gp_mode_of(k)).posterior(&data.inputs[t])?;
            row.push(post.log_density(data.targets[t], state.extra_variance_of(k)));
        }
        emissions.push(row);
    }
    Ok(forward_backward(&emissions, state.stay_probability))
}
