//! Scheduled external torques.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the torque inside one window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TorqueProcess {
    /// A steady push (N·m).
    Constant { torque: f64 },
    /// First-order low-passed white noise with stationary std `sigma` (N·m)
    /// and corner `bandwidth` (Hz).
    FilteredNoise { sigma: f64, bandwidth: f64 },
    /// One half-sine pulse of peak `magnitude` (N·m) and duration `width` (s)
    /// at the start of the window.
    Impulse { magnitude: f64, width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationWindow {
    pub start: f64,
    pub end: f64,
    pub process: TorqueProcess,
}

/// Non-overlapping, time-ordered perturbation windows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationProfile {
    #[serde(default)]
    pub windows: Vec<PerturbationWindow>,
}

impl PerturbationProfile {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(mut windows: Vec<PerturbationWindow>) -> Result<Self> {
        windows.sort_by(|a, b| a.start.total_cmp(&b.start));
        let p = Self { windows };
        p.validate()?;
        Ok(p)
    }

    /// Half-sine impulses of alternating sign every `period` seconds.
    pub fn impulse_train(first: f64, period: f64, count: usize, magnitude: f64, width: f64) -> Result<Self> {
        let windows = (0..count)
            .map(|i| PerturbationWindow {
                start: first + i as f64 * period,
                end: first + i as f64 * period + width,
                process: TorqueProcess::Impulse {
                    magnitude: if i % 2 == 0 { magnitude } else { -magnitude },
                    width,
                },
            })
            .collect();
        Self::new(windows)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.windows.iter().enumerate() {
            if !(w.start.is_finite() && w.end.is_finite() && w.end > w.start) {
                return Err(Error::InvalidConfig(format!("perturbation window {i}: bad interval")));
            }
            let finite = match w.process {
                TorqueProcess::Constant { torque } => torque.is_finite(),
                TorqueProcess::FilteredNoise { sigma, bandwidth } => {
                    sigma.is_finite() && sigma >= 0.0 && bandwidth.is_finite() && bandwidth > 0.0
                }
                TorqueProcess::Impulse { magnitude, width } => magnitude.is_finite() && width.is_finite() && width > 0.0,
            };
            if !finite {
                return Err(Error::InvalidConfig(format!("perturbation window {i}: bad magnitude")));
            }
            if i > 0 && w.start < self.windows[i - 1].end {
                return Err(Error::InvalidConfig(format!("perturbation windows {} and {i} overlap", i - 1)));
            }
        }
        Ok(())
    }

    /// Total time covered by windows inside `[0, horizon]`.
    pub fn active_time(&self, horizon: f64) -> f64 {
        self.windows
            .iter()
            .map(|w| (w.end.min(horizon) - w.start.max(0.0)).max(0.0))
            .sum()
    }
}

/// Stateful sampler of a profile on a fixed time grid.
#[derive(Clone, Debug)]
pub struct PerturbationSignal {
    profile: PerturbationProfile,
    rng: ChaCha8Rng,
    noise: f64,
    cursor: usize,
}

impl PerturbationSignal {
    pub fn new(profile: PerturbationProfile, seed: u64) -> Self {
        Self {
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: 0.0,
            cursor: 0,
        }
    }

    /// Torque at `time`; calls must use non-decreasing times spaced by `dt`.
    pub fn torque(&mut self, time: f64, dt: f64) -> f64 {
        let windows = &self.profile.windows;
        while self.cursor < windows.len() && windows[self.cursor].end <= time {
            self.cursor += 1;
            self.noise = 0.0;
        }
        let Some(w) = windows.get(self.cursor) else {
            return 0.0;
        };
        if time < w.start {
            return 0.0;
        }
        match w.process {
            TorqueProcess::Constant { torque } => torque,
            TorqueProcess::FilteredNoise { sigma, bandwidth } => {
                let a = (-2.0 * PI * bandwidth * dt).exp();
                let xi: f64 = StandardNormal.sample(&mut self.rng);
                self.noise = a * self.noise + (1.0 - a * a).sqrt() * sigma * xi;
                self.noise
            }
            TorqueProcess::Impulse { magnitude, width } => {
                let s = time - w.start;
                if s < width {
                    magnitude * (PI * s / width).sin()
                } else {
                    0.0
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_windows_rejected() {
        let c = TorqueProcess::Constant { torque: 1.0 };
        let r = PerturbationProfile::new(vec![
            PerturbationWindow {
                start: 0.0,
                end: 2.0,
                process: c,
            },
            PerturbationWindow {
                start: 1.0,
                end: 3.0,
                process: c,
            },
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn impulse_is_half_sine() {
        let p = PerturbationProfile::impulse_train(1.0, 1.0, 2, 2.0, 0.05).unwrap();
        let mut s = PerturbationSignal::new(p, 0);
        let dt = 1e-3;
        let mut peak: f64 = 0.0;
        let mut area = 0.0;
        let mut t = 0.0;
        while t < 1.9 {
            let v = s.torque(t, dt);
            peak = peak.max(v);
            area += v * dt;
            t += dt;
        }
        assert!((peak - 2.0).abs() < 1e-2);
        assert!((area - 2.0 * 0.05 * 2.0 / PI).abs() < 2e-3, "{area}");
    }

    #[test]
    fn filtered_noise_has_requested_spread() {
        let p = PerturbationProfile::new(vec![PerturbationWindow {
            start: 0.0,
            end: 200.0,
            process: TorqueProcess::FilteredNoise {
                sigma: 0.5,
                bandwidth: 5.0,
            },
        }])
        .unwrap();
        let mut s = PerturbationSignal::new(p, 3);
        let dt = 1e-3;
        let xs: Vec<f64> = (0..200_000).map(|i| s.torque(i as f64 * dt, dt)).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.05, "{}", var.sqrt());
    }
}
