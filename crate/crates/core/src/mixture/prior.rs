//! Markov prior on mode labels.
//!
//! `p(w) = (1/K) · π^{c₀} (1−π)^{(T−1)−c₀}` with `c₀` counting consecutive
//! pairs that share a label. The first label gets a uniform factor.

/// `log p(w)` under the time-correlated prior with `k` modes.
pub fn transition_log_prior(labels: &[usize], stay_probability: f64, k: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let pairs = labels.len() - 1;
    let same = labels.windows(2).filter(|w| w[0] == w[1]).count();
    -(k as f64).ln() + same as f64 * stay_probability.ln() + (pairs - same) as f64 * (1.0 - stay_probability).ln()
}

/// Log of the prior factors of `p(w)` that involve `w_t = candidate`:
/// the links to both neighbours.
pub fn local_log_prior(labels: &[usize], t: usize, candidate: usize, stay_probability: f64) -> f64 {
    let stay = stay_probability.ln();
    let switch = (1.0 - stay_probability).ln();
    let link = |other: usize| if other == candidate { stay } else { switch };
    let mut lp = 0.0;
    if t > 0 {
        lp += link(labels[t - 1]);
    }
    if t + 1 < labels.len() {
        lp += link(labels[t + 1]);
    }
    lp
}
