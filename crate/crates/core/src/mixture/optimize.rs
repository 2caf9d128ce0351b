//! Kernel-parameter search on the hold-one-out objective.

use crate::error::{Error, Result};
use crate::gp::{GpHyperparams, GpModel};

/// Stopping rules for [`optimize_hyperparams`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step improves the objective by less than this.
    pub tolerance: f64,
    /// Gradient norm below which the start point is returned untouched.
    pub gradient_tolerance: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            gradient_tolerance: 1e-8,
        }
    }
}

const FD_STEP: f64 = 1e-4;
// ln-space box keeping the kernel numerically sane
const LOG_BOUNDS: [(f64, f64); 3] = [(-6.9, 6.9), (-18.5, 13.8), (-18.5, 13.8)];

fn clamp(mut p: [f64; 3]) -> [f64; 3] {
    for (v, (lo, hi)) in p.iter_mut().zip(LOG_BOUNDS) {
        *v = v.clamp(lo, hi);
    }
    p
}

/// Weighted hold-one-out log predictive density at ln-parameters `p`.
fn objective<X: AsRef<[f64]>>(inputs: &[X], targets: &[f64], p: [f64; 3], weight: f64) -> f64 {
    let Ok(h) = GpHyperparams::from_log(p) else {
        return f64::NEG_INFINITY;
    };
    match GpModel::fit(inputs, targets, h).and_then(|m| m.loo_log_predictive()) {
        Ok(v) if v.is_finite() => weight * v,
        _ => f64::NEG_INFINITY,
    }
}

fn gradient<X: AsRef<[f64]>>(inputs: &[X], targets: &[f64], p: [f64; 3], weight: f64) -> [f64; 3] {
    let mut g = [0.0; 3];
    for i in 0..3 {
        let mut up = p;
        let mut down = p;
        up[i] += FD_STEP;
        down[i] -= FD_STEP;
        g[i] = (objective(inputs, targets, up, weight) - objective(inputs, targets, down, weight)) / (2.0 * FD_STEP);
        if !g[i].is_finite() {
            g[i] = 0.0;
        }
    }
    g
}

/// Maximizes the weighted hold-one-out log predictive density of one mode's
/// data over `(l, σ_y, σ_n)` by numerical gradient ascent in ln-space.
///
/// Never returns a point with a lower objective than `init`.
pub fn optimize_hyperparams<X: AsRef<[f64]>>(
    inputs: &[X],
    targets: &[f64],
    init: GpHyperparams,
    weight: f64,
    opts: &OptimizeOptions,
) -> Result<GpHyperparams> {
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch(inputs.len(), targets.len()));
    }
    if targets.len() < 2 {
        return Err(Error::TooFewSamples(targets.len()));
    }
    if targets.iter().all(|&y| y == targets[0]) {
        return init.with_noise_variance(init.noise_variance().max(1e-8));
    }

    let mut p = clamp(init.to_log());
    let mut f = objective(inputs, targets, p, weight);
    if !f.is_finite() {
        return Err(Error::NonFinite("hold-one-out objective at initial parameters"));
    }
    let mut step = 0.5;
    for _ in 0..opts.max_iterations {
        let g = gradient(inputs, targets, p, weight);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < opts.gradient_tolerance {
            break;
        }
        let mut accepted = None;
        for _ in 0..40 {
            let cand = clamp([
                p[0] + step * g[0] / norm,
                p[1] + step * g[1] / norm,
                p[2] + step * g[2] / norm,
            ]);
            let fc = objective(inputs, targets, cand, weight);
            if fc > f {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
        let Some((cand, fc)) = accepted else { break };
        let gain = fc - f;
        p = cand;
        f = fc;
        step = (step * 1.5).min(2.0);
        if gain < opts.tolerance {
            break;
        }
    }
    GpHyperparams::from_log(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_targets_return_init() {
        let h = GpHyperparams::new(1.0, 2.0, 0.5).unwrap();
        let out = optimize_hyperparams(&[[0.0], [1.0], [2.0]], &[3.0, 3.0, 3.0], h, 1.0, &OptimizeOptions::default())
            .unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn needs_two_samples() {
        let h = GpHyperparams::new(1.0, 2.0, 0.5).unwrap();
        assert!(matches!(
            optimize_hyperparams(&[[0.0]], &[3.0], h, 1.0, &OptimizeOptions::default()),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn never_worse_than_init() {
        let xs: Vec<[f64; 1]> = (0..30).map(|i| [i as f64 * 0.2]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] * 1.3).sin() + 0.05 * (x[0] * 37.0).cos()).collect();
        let h = GpHyperparams::new(3.0, 0.2, 0.3).unwrap();
        let out = optimize_hyperparams(&xs, &ys, h, 1.0, &OptimizeOptions::default()).unwrap();
        let f0 = GpModel::fit(&xs, &ys, h).unwrap().loo_log_predictive().unwrap();
        let f1 = GpModel::fit(&xs, &ys, out).unwrap().loo_log_predictive().unwrap();
        assert!(f1 >= f0);
        assert!(f1 > f0 + 1.0, "{f0} -> {f1}");
    }
}
