//! Run configuration shared by the command-line front end and the examples.
//!
//! A run is fully determined by a [`RunConfig`] and a seed. Every section
//! falls back to its defaults, so a scenario file only lists what it changes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compensation::ImpedanceParams;
use crate::dataset::FeatureLayout;
use crate::error::{Error, Result};
use crate::evaluation::{DragOptions, ImpactOptions, StiffnessOptions};
use crate::mixture::{MixtureConfig, SemOptions};
use crate::sim::ExplorationConfig;

/// Named starting points for the exploration section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Unperturbed exploration of the default plant.
    Nominal,
    /// Exploration with bouts of random pushing.
    Perturbed,
    /// Payload attached halfway through the run.
    Payload,
}

impl Preset {
    pub fn exploration(self) -> ExplorationConfig {
        match self {
            Preset::Nominal => ExplorationConfig::default(),
            Preset::Perturbed => ExplorationConfig::perturbed(),
            Preset::Payload => ExplorationConfig::payload(),
        }
    }
}

/// Mixture identification settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    /// Total mode count K, disturbance mode included.
    pub modes: usize,
    /// Reserve the last mode for disturbances on mode 0.
    pub disturbance: bool,
    /// π
    pub stay_probability: f64,
    pub iterations: usize,
    /// Include sgn(θ̇) as a regression feature.
    pub sign_feature: bool,
    /// Kernel-parameter ascent steps per SEM iteration.
    pub hyper_iterations: usize,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        let sem = SemOptions::default();
        Self {
            modes: 2,
            disturbance: true,
            stay_probability: 0.95,
            iterations: sem.iterations,
            sign_feature: true,
            hyper_iterations: sem.hyper.max_iterations,
        }
    }
}

impl IdentifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::InvalidConfig("--modes must be ≥ 1".into()));
        }
        if !(self.stay_probability > 0.0 && self.stay_probability < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "--pi {} must lie strictly between 0 and 1",
                self.stay_probability
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("--iters must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> FeatureLayout {
        if self.sign_feature {
            FeatureLayout::WithSign
        } else {
            FeatureLayout::Nominal
        }
    }

    pub fn mixture(&self) -> Result<MixtureConfig> {
        self.validate()?;
        MixtureConfig::from_total_modes(self.modes, self.disturbance, self.stay_probability)
    }

    pub fn sem_options(&self) -> SemOptions {
        let mut o = SemOptions {
            iterations: self.iterations,
            ..SemOptions::default()
        };
        o.hyper.max_iterations = self.hyper_iterations;
        o
    }
}

/// Deployed policy settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompensateConfig {
    /// Nominal mode whose model drives the feedforward.
    pub mode: usize,
    pub impedance: ImpedanceParams,
    /// Closed-loop run length for `compensate` (s).
    pub duration: f64,
}

impl Default for CompensateConfig {
    fn default() -> Self {
        Self {
            mode: 0,
            impedance: ImpedanceParams::stiffness(3.5, 0.0),
            duration: 60.0,
        }
    }
}

/// Gravity-model error sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumConfig {
    /// Amplitude `a` of the error `g̃(θ) = a sin θ + offset` (N·m).
    pub amplitude: f64,
    pub offset: f64,
    /// θ_des (rad)
    pub target: f64,
    /// K_imp values (N·m/rad).
    pub stiffness: Vec<f64>,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.5,
            offset: 0.0,
            target: 0.8,
            stiffness: (0..=20).map(|i| 10f64.powf(i as f64 / 10.0)).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub drag: DragOptions,
    pub stiffness: StiffnessOptions,
    pub impact: ImpactOptions,
    pub equilibrium: EquilibriumConfig,
}

/// Everything a command needs besides its input files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Base for the exploration section when it is not given in full.
    pub preset: Option<Preset>,
    pub exploration: ExplorationConfig,
    pub identify: IdentifyConfig,
    pub compensate: CompensateConfig,
    pub evaluate: EvaluateConfig,
}

impl RunConfig {
    /// Parses TOML. A `preset` key replaces the exploration defaults with
    /// the preset before the `[exploration]` table is applied on top.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text)?;
        let preset: Option<Preset> = match raw.get("preset") {
            Some(v) => Some(v.clone().try_into()?),
            None => None,
        };
        let mut cfg: RunConfig = toml::from_str(text)?;
        if let Some(p) = preset {
            let mut base = toml::Table::try_from(p.exploration())?;
            if let Some(toml::Value::Table(over)) = raw.get("exploration") {
                merge(&mut base, over);
            }
            cfg.exploration = toml::Value::Table(base).try_into()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn with_preset(preset: Preset) -> Self {
        Self {
            preset: Some(preset),
            exploration: preset.exploration(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.exploration.validate()?;
        self.identify.validate()?;
        self.compensate.impedance.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn preset_then_overrides() {
        let cfg = RunConfig::from_toml("preset = \"perturbed\"\n[exploration]\nduration = 5.0\n").unwrap();
        let base = ExplorationConfig::perturbed();
        assert_eq!(cfg.exploration.duration, 5.0);
        assert_eq!(cfg.exploration.perturbation, base.perturbation);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::with_preset(Preset::Payload);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_out_of_range_pi() {
        let e = RunConfig::from_toml("[identify]\nstay_probability = 1.0\n").unwrap_err();
        assert!(matches!(e, Error::InvalidConfig(_)), "{e}");
    }
}
