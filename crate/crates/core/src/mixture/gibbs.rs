//! Gibbs resampling of latent mode labels.

use rand::Rng;

use crate::error::Result;

use super::likelihood::ModeModels;
use super::prior::local_log_prior;
use super::{MixtureState, TrainingSet};

/// Normalizes log-weights into probabilities.
pub(crate) fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Draws an index from `probs` with one uniform variate.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `p(w_t = k | D, w_{−t}, Θ)` for every k, given models synced with
/// `state.labels`.
pub fn gibbs_conditional(t: usize, state: &MixtureState, data: &TrainingSet, models: &ModeModels) -> Result<Vec<f64>> {
    let ll = models.log_likelihoods(t, state, data)?;
    let lw: Vec<f64> = ll
        .iter()
        .enumerate()
        .map(|(k, l)| l + local_log_prior(&state.labels, t, k, state.stay_probability))
        .collect();
    Ok(softmax(&lw))
}

/// Result of one left-to-right sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub labels: Vec<usize>,
    /// Conditional probability of the label drawn at each position.
    pub chosen_probability: Vec<f64>,
}

/// One full sweep over `t = 1..T`, resampling each label from its
/// conditional with both temporal neighbours fixed.
pub fn gibbs_sweep<R: Rng + ?Sized>(state: &MixtureState, data: &TrainingSet, rng: &mut R) -> Result<SweepOutcome> {
    let mut work = state.clone();
    let mut models = ModeModels::build(&work, data)?;
    let mut chosen = Vec::with_capacity(data.len());
    let k_total = work.mode_count();
    for t in 0..data.len() {
        if k_total == 1 {
            chosen.push(1.0);
            continue;
        }
        let probs = gibbs_conditional(t, &work, data, &models)?;
        let draw = sample_categorical(&probs, rng);
        chosen.push(probs[draw]);
        let old = work.labels[t];
        if draw != old {
            work.labels[t] = draw;
            // The disturbance mode has no training set of its own.
            for k in [old, draw] {
                if k < work.nominal_count() {
                    models.refit(k, &work, data)?;
                }
            }
        }
    }
    Ok(SweepOutcome {
        labels: work.labels,
        chosen_probability: chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_handles_extreme_log_weights() {
        let p = softmax(&[-1e4, 0.0, -1e4]);
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
        let q = softmax(&[3.0, 3.0]);
        assert_eq!(q, vec![0.5, 0.5]);
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs = [0.2, 0.5, 0.3];
        let mut counts = [0usize; 3];
        let n = 20_000;
        for _ in 0..n {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        for k in 0..3 {
            let f = counts[k] as f64 / n as f64;
            assert!((f - probs[k]).abs() < 0.015, "{k}: {f}");
        }
    }
}
