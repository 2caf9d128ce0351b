//! Quasi-static PD exploration runs that produce annotated datasets.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::filter::{central_difference, filtfilt, Biquad};
use super::{attach_payload, step, ActuatorConfig, PerturbationProfile, PerturbationSignal, SimState};
use crate::dataset::{sign_with_deadband, Dataset, Provenance, Sample, Truth};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdGains {
    /// N·m/rad
    pub kp: f64,
    /// N·m·s/rad
    pub kd: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self { kp: 2000.0, kd: 60.0 }
    }
}

/// Reference that moves between positions along half-cosine blends, pausing
/// at each.
///
/// Each move starts and ends at rest and peaks at `sweep_velocity` halfway.
/// After the last position the reference heads back to the first, so the
/// schedule repeats for as long as the run lasts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoints {
    /// rad
    pub positions: Vec<f64>,
    /// rad/s
    pub sweep_velocity: f64,
    /// Pause at each waypoint (s).
    pub dwell: f64,
}

impl Default for Waypoints {
    fn default() -> Self {
        Self {
            positions: vec![-1.0, -0.5, 0.0, 0.5, 1.0, 0.5, 0.0, -0.5],
            sweep_velocity: 0.5,
            dwell: 0.5,
        }
    }
}

impl Waypoints {
    pub fn validate(&self, range_of_motion: (f64, f64)) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::InvalidConfig("at least one waypoint is required".into()));
        }
        for &p in &self.positions {
            if !(p.is_finite() && p >= range_of_motion.0 && p <= range_of_motion.1) {
                return Err(Error::InvalidConfig(format!(
                    "waypoint {p} outside range of motion [{}, {}]",
                    range_of_motion.0, range_of_motion.1
                )));
            }
        }
        if !(self.sweep_velocity.is_finite() && self.sweep_velocity > 0.0) {
            return Err(Error::InvalidConfig("sweep velocity must be > 0".into()));
        }
        if !(self.dwell.is_finite() && self.dwell >= 0.0) {
            return Err(Error::InvalidConfig("dwell must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Reference position and velocity at `time` (s).
    pub fn reference(&self, time: f64) -> (f64, f64) {
        let n = self.positions.len();
        if n == 1 {
            return (self.positions[0], 0.0);
        }
        let legs: Vec<(f64, f64, f64)> = (0..n)
            .map(|i| {
                let from = self.positions[i];
                let to = self.positions[(i + 1) % n];
                (from, to, PI * (to - from).abs() / (2.0 * self.sweep_velocity))
            })
            .collect();
        let period: f64 = legs.iter().map(|l| l.2 + self.dwell).sum();
        if period <= 0.0 {
            return (self.positions[0], 0.0);
        }
        let mut t = time.max(0.0) % period;
        for &(from, to, travel) in &legs {
            if t < self.dwell {
                return (from, 0.0);
            }
            t -= self.dwell;
            if t < travel {
                let phase = PI * t / travel;
                let delta = to - from;
                return (
                    from + 0.5 * delta * (1.0 - phase.cos()),
                    0.5 * delta * PI / travel * phase.sin(),
                );
            }
            t -= travel;
        }
        (self.positions[0], 0.0)
    }
}

/// A point mass carried during `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadPhase {
    pub start: f64,
    pub end: f64,
    /// kg
    pub mass: f64,
    /// m
    pub radius: f64,
}

/// Everything needed to reproduce one exploration run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    pub actuator: ActuatorConfig,
    pub pd: PdGains,
    pub waypoints: Waypoints,
    pub perturbation: PerturbationProfile,
    pub payloads: Vec<PayloadPhase>,
    /// Allowed waypoint interval (rad).
    pub range_of_motion: (f64, f64),
    /// Logged span (s); the sample count is `duration · sample_rate`.
    pub duration: f64,
    /// Unlogged lead-in that lets the PD loop settle (s).
    pub settle: f64,
    /// Hz
    pub sample_rate: f64,
    /// Integrator step (s).
    pub dt: f64,
    /// |θ̇| above this aborts the run (rad/s).
    pub velocity_bound: f64,
    /// Encoder noise std (rad).
    pub position_noise: f64,
    /// Torque sensing noise std (N·m).
    pub torque_noise: f64,
    /// |θ̇| estimates within this band log sgn = 0 (rad/s).
    pub sign_deadband: f64,
    /// Samples whose window sees |τ_ext| above this are annotated perturbed (N·m).
    pub perturbation_threshold: f64,
    /// Zero-phase low-pass corner for the differentiated signals (Hz).
    pub filter_cutoff: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            actuator: ActuatorConfig::default(),
            pd: PdGains::default(),
            waypoints: Waypoints::default(),
            perturbation: PerturbationProfile::none(),
            payloads: Vec::new(),
            range_of_motion: (-PI, PI),
            duration: 16.35,
            settle: 1.0,
            sample_rate: 20.0,
            dt: 1e-4,
            velocity_bound: 20.0,
            position_noise: 1e-4,
            torque_noise: 0.02,
            sign_deadband: 0.02,
            perturbation_threshold: 0.02,
            filter_cutoff: 4.0,
        }
    }
}

impl ExplorationConfig {
    /// Default plant explored while four bouts of random pushing act on the
    /// load, 92 of the 327 logged samples.
    pub fn perturbed() -> Self {
        use super::{PerturbationWindow, TorqueProcess};
        let bout = |start: f64| PerturbationWindow {
            start,
            end: start + 1.1,
            process: TorqueProcess::FilteredNoise {
                sigma: 2.0,
                bandwidth: 5.0,
            },
        };
        Self {
            perturbation: PerturbationProfile {
                windows: vec![bout(0.8), bout(4.9), bout(9.0), bout(13.05)],
            },
            ..Self::default()
        }
    }

    /// Exploration over `[0.6, 1.8]` rad with a 0.5 kg payload at 0.3 m
    /// carried through the second half of the run.
    pub fn payload() -> Self {
        let duration = 16.35;
        Self {
            waypoints: Waypoints {
                positions: vec![0.6, 1.8],
                sweep_velocity: 0.6,
                dwell: 0.4,
            },
            payloads: vec![PayloadPhase {
                start: duration / 2.0,
                end: f64::INFINITY,
                mass: 0.5,
                radius: 0.3,
            }],
            duration,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.actuator.validate()?;
        self.waypoints.validate(self.range_of_motion)?;
        self.perturbation.validate()?;
        let positive = [
            ("duration", self.duration),
            ("sample_rate", self.sample_rate),
            ("dt", self.dt),
            ("velocity_bound", self.velocity_bound),
            ("filter_cutoff", self.filter_cutoff),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be > 0")));
            }
        }
        let nonneg = [
            ("settle", self.settle),
            ("position_noise", self.position_noise),
            ("torque_noise", self.torque_noise),
            ("sign_deadband", self.sign_deadband),
            ("perturbation_threshold", self.perturbation_threshold),
            ("pd.kp", self.pd.kp),
            ("pd.kd", self.pd.kd),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be ≥ 0")));
            }
        }
        if self.filter_cutoff >= self.sample_rate / 2.0 {
            return Err(Error::InvalidConfig("filter cutoff must be below Nyquist".into()));
        }
        if self.dt * self.sample_rate > 1.0 {
            return Err(Error::InvalidConfig("integrator step longer than the log interval".into()));
        }
        for (i, p) in self.payloads.iter().enumerate() {
            attach_payload(&self.actuator, p.mass, p.radius)?;
            if !(p.end > p.start) {
                return Err(Error::InvalidConfig(format!("payload phase {i}: empty interval")));
            }
            if i > 0 && p.start < self.payloads[i - 1].end {
                return Err(Error::InvalidConfig(format!("payload phases {} and {i} overlap", i - 1)));
            }
        }
        Ok(())
    }

    /// Number of nominal (unperturbed) modes the run can produce.
    pub fn nominal_modes(&self) -> usize {
        1 + self.payloads.len()
    }

    /// Mode index assigned to perturbed samples.
    pub fn perturbed_mode(&self) -> usize {
        self.nominal_modes()
    }

    /// Hex SHA-256 over the canonical JSON of the configuration and seed.
    pub fn hash(&self, seed: u64) -> String {
        let json = serde_json::to_string(&(self, seed)).expect("configuration serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn payload_at(&self, time: f64) -> Option<usize> {
        self.payloads.iter().position(|p| time >= p.start && time < p.end)
    }

    fn samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }
}

/// Simulates PD tracking of the waypoint schedule and logs an annotated
/// dataset at `cfg.sample_rate`.
///
/// The logged torque is the commanded torque averaged over each log
/// interval, plus sensing noise. Position is point-sampled with encoder
/// noise; velocity and acceleration come from central differences passed
/// through a zero-phase low-pass.
pub fn run_exploration<R: Rng + ?Sized>(cfg: &ExplorationConfig, seed: u64, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.samples();
    if n < 2 {
        return Err(Error::InvalidConfig("run must log at least two samples".into()));
    }
    let log_dt = 1.0 / cfg.sample_rate;
    let per_log = (log_dt / cfg.dt).round().max(1.0) as usize;
    let dt = log_dt / per_log as f64;
    let settle_steps = (cfg.settle / dt).round() as usize;
    let half = per_log / 2;
    // Fine steps: settle, then n log intervals, then half an interval so the
    // last centred window is complete.
    let total = settle_steps + n * per_log + half + 1;

    let mut signal = PerturbationSignal::new(cfg.perturbation.clone(), rng.random());
    let payload_cfgs: Vec<ActuatorConfig> = cfg
        .payloads
        .iter()
        .map(|p| attach_payload(&cfg.actuator, p.mass, p.radius))
        .collect::<Result<_>>()?;

    let start = cfg.waypoints.reference(0.0).0;
    let mut state = SimState::at_rest(start);
    let mut positions = Vec::with_capacity(total);
    let mut commands = Vec::with_capacity(total);
    let mut externals = Vec::with_capacity(total);
    let mut modes = Vec::with_capacity(total);
    for i in 0..total {
        // Log time 0 sits at fine step `settle_steps`.
        let t = (i as f64 - settle_steps as f64) * dt;
        let (r, rd) = cfg.waypoints.reference(t);
        let tau_cmd = cfg.pd.kp * (r - state.position) + cfg.pd.kd * (rd - state.velocity);
        let tau_ext = if t >= 0.0 { signal.torque(t, dt) } else { 0.0 };
        let payload = if t >= 0.0 { cfg.payload_at(t) } else { None };
        let plant = payload.map_or(&cfg.actuator, |p| &payload_cfgs[p]);
        positions.push(state.position);
        commands.push(tau_cmd);
        externals.push(tau_ext);
        modes.push(payload.map_or(0, |p| p + 1));
        state = step(&state, tau_cmd, tau_ext, dt, plant)?;
        if state.velocity.abs() > cfg.velocity_bound {
            return Err(Error::Unstable {
                time: t,
                velocity: state.velocity,
                bound: cfg.velocity_bound,
            });
        }
    }

    let pos_noise = Normal::new(0.0, cfg.position_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let tau_noise = Normal::new(0.0, cfg.torque_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut theta = Vec::with_capacity(n);
    let mut torque = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for j in 0..n {
        let centre = settle_steps + j * per_log;
        let window = centre - half..centre - half + per_log;
        let mean_cmd = commands[window.clone()].iter().sum::<f64>() / per_log as f64;
        let peak_ext = externals[window]
            .iter()
            .copied()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let mode = if peak_ext.abs() > cfg.perturbation_threshold {
            cfg.perturbed_mode()
        } else {
            modes[centre]
        };
        theta.push(positions[centre] + pos_noise.sample(rng));
        torque.push(mean_cmd + tau_noise.sample(rng));
        truth.push(Truth {
            mode,
            external_torque: peak_ext,
        });
    }

    let lp = Biquad::butterworth_lowpass(cfg.filter_cutoff, cfg.sample_rate);
    let velocity = filtfilt(&lp, &central_difference(&theta, log_dt));
    let acceleration = filtfilt(&lp, &central_difference(&velocity, log_dt));
    let samples = (0..n)
        .map(|j| Sample {
            time: j as f64 * log_dt,
            position: theta[j],
            velocity: velocity[j],
            acceleration: acceleration[j],
            sign: sign_with_deadband(velocity[j], cfg.sign_deadband),
            torque: torque[j],
            truth: Some(truth[j]),
        })
        .collect();
    Dataset::new(cfg.sample_rate, Provenance::Simulator(cfg.hash(seed)), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_cycles_through_waypoints() {
        let w = Waypoints {
            positions: vec![0.0, 1.0],
            sweep_velocity: 0.5,
            dwell: 1.0,
        };
        let travel = PI;
        assert_eq!(w.reference(0.5), (0.0, 0.0));
        let (p, v) = w.reference(1.0 + travel / 2.0);
        assert!((p - 0.5).abs() < 1e-12 && (v - 0.5).abs() < 1e-12);
        assert_eq!(w.reference(1.5 + travel), (1.0, 0.0));
        let (p, v) = w.reference(2.0 + 1.5 * travel);
        assert!((p - 0.5).abs() < 1e-12 && (v + 0.5).abs() < 1e-12);
        assert_eq!(w.reference(2.5 + 2.0 * travel), (0.0, 0.0));
    }

    #[test]
    fn reference_velocity_is_derivative_of_position() {
        let w = Waypoints::default();
        for i in 0..200 {
            let t = 0.037 * i as f64;
            let h = 1e-6;
            let fd = (w.reference(t + h).0 - w.reference(t - h).0) / (2.0 * h);
            assert!((fd - w.reference(t).1).abs() < 1e-5, "{t}");
        }
    }

    #[test]
    fn unperturbed_run_is_all_nominal() {
        let cfg = ExplorationConfig {
            duration: 4.0,
            ..ExplorationConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = run_exploration(&cfg, 1, &mut rng).unwrap();
        assert_eq!(d.len(), 80);
        assert!(d.truth_modes().unwrap().iter().all(|&m| m == 0));
    }

    #[test]
    fn waypoint_outside_range_rejected() {
        let mut cfg = ExplorationConfig::default();
        cfg.range_of_motion = (-0.5, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(run_exploration(&cfg, 1, &mut rng).is_err());
    }

    #[test]
    fn unstable_gains_abort() {
        let cfg = ExplorationConfig {
            pd: PdGains { kp: 60.0, kd: -50.0 },
            ..ExplorationConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = ExplorationConfig::default();
        cfg.velocity_bound = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(run_exploration(&cfg, 1, &mut rng), Err(Error::Unstable { .. })));
    }
}
