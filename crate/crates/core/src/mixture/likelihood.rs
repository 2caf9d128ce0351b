//! Leave-one-out mode likelihoods `p(τ_t | D_k \ {t}, Θ_k)`.

use crate::error::Result;
use crate::gp::{GpModel, Posterior};

use super::{MixtureState, TrainingSet};

/// Log-likelihood of sample `t` under label `k`, refitting the mode GP
/// without `t`.
///
/// Nominal modes score `N(μ, Σ)`; the disturbance mode scores `N(μ, Σ + Σ_d)`
/// with `(μ, Σ)` from its anchor mode. An empty mode falls back to the GP
/// prior `N(0, σ_y + σ_n)`.
pub fn mode_log_likelihood(t: usize, k: usize, state: &MixtureState, data: &TrainingSet) -> Result<f64> {
    let gp_mode = state.gp_mode_of(k);
    let members: Vec<usize> = state
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &w)| i != t && w == gp_mode)
        .map(|(i, _)| i)
        .collect();
    let hyper = state.modes[gp_mode];
    let model = if members.is_empty() {
        GpModel::prior(data.dim(), hyper)
    } else {
        let (x, y) = data.subset(&members);
        GpModel::fit(&x, &y, hyper)?
    };
    let post = model.posterior(&data.inputs[t])?;
    Ok(post.log_density(data.targets[t], state.extra_variance_of(k)))
}

/// Fitted GP per nominal mode, kept in sync with a label vector.
///
/// Leave-one-out predictives for a mode's own members come from the
/// closed-form held-out identity, so they agree with a refit without the
/// sample.
#[derive(Clone, Debug)]
pub struct ModeModels {
    models: Vec<GpModel>,
    /// `(mode, position)` of each sample inside a nominal mode's training set.
    local: Vec<Option<(usize, usize)>>,
}

impl ModeModels {
    pub fn build(state: &MixtureState, data: &TrainingSet) -> Result<Self> {
        let mut mm = Self {
            models: Vec::with_capacity(state.nominal_count()),
            local: vec![None; data.len()],
        };
        for k in 0..state.nominal_count() {
            mm.models.push(GpModel::prior(data.dim(), state.modes[k]));
            mm.refit(k, state, data)?;
        }
        Ok(mm)
    }

    /// Refits nominal mode `k` from the state's current labels.
    pub fn refit(&mut self, k: usize, state: &MixtureState, data: &TrainingSet) -> Result<()> {
        for slot in self.local.iter_mut() {
            if matches!(slot, Some((mode, _)) if *mode == k) {
                *slot = None;
            }
        }
        let members = state.members(k);
        for (local, &t) in members.iter().enumerate() {
            self.local[t] = Some((k, local));
        }
        self.models[k] = if members.is_empty() {
            GpModel::prior(data.dim(), state.modes[k])
        } else {
            let (x, y) = data.subset(&members);
            GpModel::fit(&x, &y, state.modes[k])?
        };
        Ok(())
    }

    pub fn model(&self, k: usize) -> &GpModel {
        &self.models[k]
    }

    pub fn models(&self) -> &[GpModel] {
        &self.models
    }

    /// Predictive of nominal mode `k` at sample `t`, excluding `t` from the
    /// training set when `t` currently belongs to `k`.
    pub fn predictive(&self, k: usize, t: usize, data: &TrainingSet) -> Result<Posterior> {
        match self.local[t] {
            Some((mode, local)) if mode == k => Ok(self.models[k].held_out(local)),
            _ => self.models[k].posterior(&data.inputs[t]),
        }
    }

    /// Log-likelihood of sample `t` under label `k` (leave-one-out).
    pub fn log_likelihood(&self, t: usize, k: usize, state: &MixtureState, data: &TrainingSet) -> Result<f64> {
        let post = self.predictive(state.gp_mode_of(k), t, data)?;
        Ok(post.log_density(data.targets[t], state.extra_variance_of(k)))
    }

    /// Log-likelihoods of sample `t` under every label.
    pub fn log_likelihoods(&self, t: usize, state: &MixtureState, data: &TrainingSet) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(state.mode_count());
        let mut cache: Vec<Option<Posterior>> = vec![None; state.nominal_count()];
        for k in 0..state.mode_count() {
            let g = state.gp_mode_of(k);
            let post = match cache[g] {
                Some(p) => p,
                None => {
                    let p = self.predictive(g, t, data)?;
                    cache[g] = Some(p);
                    p
                }
            };
            out.push(post.log_density(data.targets[t], state.extra_variance_of(k)));
        }
        Ok(out)
    }
}
