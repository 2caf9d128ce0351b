//! Logged samples, feature layouts and feature standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth annotation attached to simulator-generated samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Index of the true dynamic mode (payload modes first, perturbed last).
    pub mode: usize,
    /// External torque at the sample (N·m), the largest magnitude seen in the
    /// logging window.
    pub external_torque: f64,
}

/// One logged record: state estimate, applied torque, optional truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Seconds.
    pub time: f64,
    /// θ (rad).
    pub position: f64,
    /// θ̇ (rad/s).
    pub velocity: f64,
    /// θ̈ (rad/s²).
    pub acceleration: f64,
    /// sgn(θ̇) with a deadband, one of −1, 0, +1.
    pub sign: i8,
    /// Applied torque τ (N·m).
    pub torque: f64,
    pub truth: Option<Truth>,
}

/// Which coordinates make up a feature vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayout {
    /// `[θ̈, θ̇, θ]`
    Nominal,
    /// `[θ̈, θ̇, θ, sgn(θ̇)]`
    #[default]
    WithSign,
}

impl FeatureLayout {
    pub const ACCELERATION: usize = 0;
    pub const VELOCITY: usize = 1;
    pub const POSITION: usize = 2;
    pub const SIGN: usize = 3;

    pub fn dim(self) -> usize {
        match self {
            FeatureLayout::Nominal => 3,
            FeatureLayout::WithSign => 4,
        }
    }

    pub fn has_sign(self) -> bool {
        matches!(self, FeatureLayout::WithSign)
    }

    pub fn features(self, s: &Sample) -> Vec<f64> {
        self.state_features(s.acceleration, s.velocity, s.position, s.sign)
    }

    pub fn state_features(self, acceleration: f64, velocity: f64, position: f64, sign: i8) -> Vec<f64> {
        let mut x = vec![acceleration, velocity, position];
        if self.has_sign() {
            x.push(f64::from(sign));
        }
        x
    }
}

/// `sgn(v)` with `|v| ≤ deadband` mapped to 0.
pub fn sign_with_deadband(v: f64, deadband: f64) -> i8 {
    if v > deadband {
        1
    } else if v < -deadband {
        -1
    } else {
        0
    }
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Simulator run; carries the hex digest of the scenario configuration.
    Simulator(String),
    External,
}

impl Provenance {
    pub fn label(&self) -> String {
        match self {
            Provenance::Simulator(hash) => format!("simulator:{hash}"),
            Provenance::External => "external".to_owned(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.strip_prefix("simulator:") {
            Some(hash) => Ok(Provenance::Simulator(hash.to_owned())),
            None if s == "external" => Ok(Provenance::External),
            None => Err(Error::Schema(format!("unknown provenance {s:?}"))),
        }
    }
}

/// Time-ordered log `D = {τ_1, x_1, …, τ_T, x_T}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sample_rate: f64,
    pub provenance: Provenance,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Builds and validates a dataset.
    pub fn new(sample_rate: f64, provenance: Provenance, samples: Vec<Sample>) -> Result<Self> {
        let d = Self {
            sample_rate,
            provenance,
            samples,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::InvalidDataset(format!("sample rate {}", self.sample_rate)));
        }
        let annotated = self.samples.first().is_some_and(|s| s.truth.is_some());
        for (i, s) in self.samples.iter().enumerate() {
            let finite = [s.time, s.position, s.velocity, s.acceleration, s.torque]
                .iter()
                .all(|v| v.is_finite());
            if !finite || s.truth.is_some_and(|t| !t.external_torque.is_finite()) {
                return Err(Error::InvalidDataset(format!("non-finite value in row {i}")));
            }
            if !(-1..=1).contains(&s.sign) {
                return Err(Error::InvalidDataset(format!("sign {} in row {i}", s.sign)));
            }
            if s.truth.is_some() != annotated {
                return Err(Error::InvalidDataset(format!(
                    "truth annotation present on some rows only (row {i})"
                )));
            }
            if i > 0 && s.time <= self.samples[i - 1].time {
                return Err(Error::InvalidDataset(format!("time not strictly increasing at row {i}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_truth(&self) -> bool {
        self.samples.first().is_some_and(|s| s.truth.is_some())
    }

    pub fn torques(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.torque).collect()
    }

    pub fn truth_modes(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.truth.map(|t| t.mode)).collect()
    }

    pub fn features(&self, layout: FeatureLayout) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| layout.features(s)).collect()
    }
}

/// Per-coordinate affine map to zero mean and unit variance.
///
/// The sign coordinate is left untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub layout: FeatureLayout,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(layout: FeatureLayout) -> Self {
        Self {
            layout,
            mean: vec![0.0; layout.dim()],
            scale: vec![1.0; layout.dim()],
        }
    }

    pub fn fit(dataset: &Dataset, layout: FeatureLayout) -> Self {
        let mut st = Self::identity(layout);
        let n = dataset.len() as f64;
        if dataset.is_empty() {
            return st;
        }
        let features = dataset.features(layout);
        for j in 0..FeatureLayout::SIGN.min(layout.dim()) {
            let mean = features.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = features.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
            st.mean[j] = mean;
            st.scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        st
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, dataset: &Dataset) -> Vec<Vec<f64>> {
        dataset
            .samples
            .iter()
            .map(|s| self.apply(&self.layout.features(s)))
            .collect()
    }

    /// Scale of the position coordinate (raw radians per standardized unit).
    pub fn position_scale(&self) -> f64 {
        self.scale[FeatureLayout::POSITION]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(time: f64, position: f64, velocity: f64, sign: i8) -> Sample {
        Sample {
            time,
            position,
            velocity,
            acceleration: 0.0,
            sign,
            torque: position,
            truth: None,
        }
    }

    #[test]
    fn rejects_non_increasing_time() {
        let s = vec![sample(0.0, 0.0, 0.0, 0), sample(0.0, 1.0, 0.0, 0)];
        assert!(Dataset::new(20.0, Provenance::External, s).is_err());
    }

    #[test]
    fn rejects_partial_truth() {
        let mut s = vec![sample(0.0, 0.0, 0.0, 0), sample(0.1, 1.0, 0.0, 0)];
        s[1].truth = Some(Truth {
            mode: 0,
            external_torque: 0.0,
        });
        assert!(Dataset::new(20.0, Provenance::External, s).is_err());
    }

    #[test]
    fn standardizer_leaves_sign_alone() {
        let s = vec![
            sample(0.0, 0.0, 1.0, 1),
            sample(0.1, 2.0, -1.0, -1),
            sample(0.2, 4.0, 3.0, 1),
        ];
        let d = Dataset::new(20.0, Provenance::External, s).unwrap();
        let st = Standardizer::fit(&d, FeatureLayout::WithSign);
        assert_eq!(st.mean[3], 0.0);
        assert_eq!(st.scale[3], 1.0);
        // constant acceleration column keeps unit scale
        assert_eq!(st.scale[0], 1.0);
        let z = st.transform(&d);
        let m: f64 = z.iter().map(|x| x[2]).sum::<f64>() / 3.0;
        let v: f64 = z.iter().map(|x| x[2] * x[2]).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-15);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(z[1][3], -1.0);
    }

    #[test]
    fn deadband_sign() {
        assert_eq!(sign_with_deadband(0.005, 0.01), 0);
        assert_eq!(sign_with_deadband(-0.5, 0.01), -1);
        assert_eq!(sign_with_deadband(0.5, 0.01), 1);
    }

    #[test]
    fn provenance_round_trip() {
        let p = Provenance::Simulator("abc123".into());
        assert_eq!(Provenance::parse(&p.label()).unwrap(), p);
        assert_eq!(Provenance::parse("external").unwrap(), Provenance::External);
        assert!(Provenance::parse("other").is_err());
    }
}
