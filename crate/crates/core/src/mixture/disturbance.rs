//! Disturbance variance `Σ_d` from residuals against the nominal model.

use crate::error::Result;

use super::likelihood::ModeModels;
use super::{MixtureState, TrainingSet};

/// One disturbance-labelled sample's residual against the anchor GP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisturbanceResidual {
    /// `τ_t − μ_t`
    pub residual: f64,
    /// Nominal predictive variance `Σ_t`.
    pub variance: f64,
    /// SEM weight `p(w_t | D, Θ)`.
    pub weight: f64,
}

/// `−½ Σ_t p_t [ r_t² / (Σ_t + Σ_d) + ln(Σ_t + Σ_d) ]`.
pub fn disturbance_objective(residuals: &[DisturbanceResidual], sigma_d: f64) -> f64 {
    -0.5 * residuals
        .iter()
        .map(|r| {
            let v = r.variance + sigma_d;
            r.weight * (r.residual * r.residual / v + v.ln())
        })
        .sum::<f64>()
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const GRID: usize = 96;

/// Maximizes [`disturbance_objective`] over `Σ_d ≥ 0`.
///
/// Every term decreases for `Σ_d > r_t² − Σ_t`, so the maximizer lies in
/// `[0, max_t(r_t² − Σ_t)]`. A log-spaced scan locates the best cell, then a
/// golden-section search refines it to 1e-8 (relative above 1).
pub fn maximize_disturbance_variance(residuals: &[DisturbanceResidual]) -> f64 {
    let upper = residuals
        .iter()
        .filter(|r| r.weight > 0.0)
        .map(|r| r.residual * r.residual - r.variance)
        .fold(0.0, f64::max);
    if upper <= 0.0 {
        return 0.0;
    }
    let f = |d: f64| disturbance_objective(residuals, d);

    let mut grid = Vec::with_capacity(GRID + 1);
    grid.push(0.0);
    let lo = upper * 1e-10;
    for i in 0..GRID {
        grid.push(lo * (upper / lo).powf(i as f64 / (GRID - 1) as f64));
    }
    let best = (0..grid.len())
        .max_by(|&a, &b| f(grid[a]).total_cmp(&f(grid[b])))
        .expect("grid is non-empty");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];

    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > 1e-8 * b.max(1.0) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // the boundary can win when the interior is flat
    if f(0.0) >= f(mid) {
        0.0
    } else {
        mid
    }
}

/// Re-estimates `Σ_d` from the disturbance-labelled samples, with residuals
/// against the anchor GP trained on the anchor's members. Returns the current
/// value when no sample carries the disturbance label.
pub fn fit_disturbance_cov(
    state: &MixtureState,
    data: &TrainingSet,
    models: &ModeModels,
    weights: &[f64],
) -> Result<f64> {
    let (Some(dist), Some(label)) = (state.disturbance, state.disturbance_label()) else {
        return Ok(0.0);
    };
    let mut residuals = Vec::new();
    for t in state.members(label) {
        let post = models.predictive(dist.anchor, t, data)?;
        residuals.push(DisturbanceResidual {
            residual: data.targets[t] - post.mean,
            variance: post.variance,
            weight: weights.get(t).copied().unwrap_or(1.0),
        });
    }
    if residuals.is_empty() {
        return Ok(dist.variance);
    }
    Ok(maximize_disturbance_variance(&residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn r(residual: f64, variance: f64) -> DisturbanceResidual {
        DisturbanceResidual {
            residual,
            variance,
            weight: 1.0,
        }
    }

    #[test]
    fn zero_residuals_give_zero() {
        assert_eq!(maximize_disturbance_variance(&[r(0.0, 0.1), r(0.0, 0.3)]), 0.0);
    }

    #[test]
    fn single_residual_closed_form() {
        for &(res, s) in &[(2.0, 0.5), (0.3, 0.01), (10.0, 3.0), (0.1, 0.5)] {
            let d = maximize_disturbance_variance(&[r(res, s)]);
            let expect = (res * res - s).max(0.0);
            assert_relative_eq!(d, expect, epsilon = 1e-7, max_relative = 1e-7);
        }
    }

    #[test]
    fn stationary_point_of_objective() {
        let rs = [r(1.0, 0.2), r(-2.0, 0.1), r(0.5, 0.3), r(3.0, 0.2)];
        let d = maximize_disturbance_variance(&rs);
        let h = 1e-5;
        let g = (disturbance_objective(&rs, d + h) - disturbance_objective(&rs, d - h)) / (2.0 * h);
        assert!(g.abs() < 1e-6, "{g}");
    }
}
