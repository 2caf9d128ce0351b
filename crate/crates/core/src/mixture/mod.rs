//! Mixture-of-GP identification with Stochastic EM.
//!
//! Labels are resampled one sweep at a time with Gibbs sampling (S-step) and
//! per-mode kernel parameters plus the disturbance variance are re-fit on the
//! induced partition (M-step). The optional disturbance mode is a copy of one
//! nominal mode with `Σ_d` added to its predictive variance.

mod classify;
mod disturbance;
mod gibbs;
mod likelihood;
mod optimize;
mod prior;
mod sem;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureLayout, Standardizer};
use crate::error::{Error, Result};
use crate::gp::GpHyperparams;

pub use classify::{classify, classify_with_models, forward_backward};
pub use disturbance::{disturbance_objective, fit_disturbance_cov, maximize_disturbance_variance, DisturbanceResidual};
pub use gibbs::{gibbs_conditional, gibbs_sweep, SweepOutcome};
pub use likelihood::{mode_log_likelihood, ModeModels};
pub use optimize::{optimize_hyperparams, OptimizeOptions};
pub use prior::{local_log_prior, transition_log_prior};
pub use sem::{identify, initialize, sem_iterate, sample_log_likelihood, Identification, IterationRecord, SemOptions};

/// Standardized inputs and raw torque targets the mixture operates on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch(inputs.len(), targets.len()));
        }
        Ok(Self { inputs, targets })
    }

    /// Standardizes the dataset's features under `layout`.
    pub fn from_dataset(dataset: &Dataset, layout: FeatureLayout) -> (Self, Standardizer) {
        let st = Standardizer::fit(dataset, layout);
        let set = Self {
            inputs: st.transform(dataset),
            targets: dataset.torques(),
        };
        (set, st)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> (Vec<&[f64]>, Vec<f64>) {
        (
            indices.iter().map(|&i| self.inputs[i].as_slice()).collect(),
            indices.iter().map(|&i| self.targets[i]).collect(),
        )
    }

    /// Population variance of the targets.
    pub fn target_variance(&self) -> f64 {
        let n = self.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mean = self.targets.iter().sum::<f64>() / n;
        self.targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n
    }
}

/// The inflated-covariance copy of a nominal mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceMode {
    /// Nominal mode whose GP supplies `(μ_t, Σ_t)`.
    pub anchor: usize,
    /// `Σ_d` (N²m²).
    pub variance: f64,
}

/// Mode count, per-mode kernel parameters, Markov prior and labels.
///
/// Labels are 0-based. Nominal modes occupy `0..modes.len()`; when present,
/// the disturbance mode is label `modes.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub modes: Vec<GpHyperparams>,
    pub disturbance: Option<DisturbanceMode>,
    /// π, probability that consecutive samples share a mode.
    pub stay_probability: f64,
    pub labels: Vec<usize>,
    pub iteration: usize,
}

impl MixtureState {
    pub fn nominal_count(&self) -> usize {
        self.modes.len()
    }

    /// Total mode count K, counting the disturbance mode.
    pub fn mode_count(&self) -> usize {
        self.modes.len() + usize::from(self.disturbance.is_some())
    }

    pub fn disturbance_label(&self) -> Option<usize> {
        self.disturbance.map(|_| self.modes.len())
    }

    /// Nominal mode whose GP scores label `k`.
    pub fn gp_mode_of(&self, k: usize) -> usize {
        match self.disturbance {
            Some(d) if k == self.modes.len() => d.anchor,
            _ => k,
        }
    }

    /// Extra predictive variance for label `k` (Σ_d for the disturbance mode).
    pub fn extra_variance_of(&self, k: usize) -> f64 {
        match self.disturbance {
            Some(d) if k == self.modes.len() => d.variance,
            _ => 0.0,
        }
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &w)| w == k)
            .map(|(t, _)| t)
            .collect()
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidConfig("at least one nominal mode is required".into()));
        }
        if !(self.stay_probability > 0.0 && self.stay_probability < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "stay probability {} outside (0, 1)",
                self.stay_probability
            )));
        }
        if let Some(d) = self.disturbance {
            if d.anchor >= self.modes.len() {
                return Err(Error::InvalidConfig(format!("disturbance anchor {} out of range", d.anchor)));
            }
            if !(d.variance.is_finite() && d.variance >= 0.0) {
                return Err(Error::InvalidConfig(format!("disturbance variance {}", d.variance)));
            }
        }
        if self.labels.len() != len {
            return Err(Error::LengthMismatch(self.labels.len(), len));
        }
        let k = self.mode_count();
        if let Some(bad) = self.labels.iter().find(|&&w| w >= k) {
            return Err(Error::InvalidConfig(format!("label {bad} out of range for {k} modes")));
        }
        Ok(())
    }
}

/// Mixture structure chosen by the user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    /// Number of nominal (GP) modes.
    pub nominal_modes: usize,
    /// Attach a disturbance mode to nominal mode 0.
    pub disturbance: bool,
    pub stay_probability: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            nominal_modes: 1,
            disturbance: true,
            stay_probability: 0.95,
        }
    }
}

impl MixtureConfig {
    /// From a total mode count K: with a disturbance mode, the last of the K
    /// modes is the disturbance copy of mode 0. K = 1 never has one.
    pub fn from_total_modes(k: usize, disturbance: bool, stay_probability: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("mode count must be ≥ 1".into()));
        }
        let disturbance = disturbance && k >= 2;
        let c = Self {
            nominal_modes: if disturbance { k - 1 } else { k },
            disturbance,
            stay_probability,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nominal_modes == 0 {
            return Err(Error::InvalidConfig("at least one nominal mode is required".into()));
        }
        if !(self.stay_probability > 0.0 && self.stay_probability < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "stay probability {} outside (0, 1)",
                self.stay_probability
            )));
        }
        Ok(())
    }

    pub fn total_modes(&self) -> usize {
        self.nominal_modes + usize::from(self.disturbance)
    }
}
