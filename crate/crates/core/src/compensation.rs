//! Deployment-side control: impedance law, position-only GP feedforward, the
//! storage function that certifies the combination, and energy audits.
//!
//! The feedforward evaluates the learned inverse dynamics at zero velocity
//! and acceleration, `τ_ff(θ) = τ̂(0, 0, θ)`. Because it depends on position
//! alone it is the gradient of a bounded potential `P(θ)`, and
//!
//! ```text
//! S(θ, θ̇) = ½ M θ̇² + V_g(θ) − P(θ) + ½ K_imp (θ − θ_des)²
//! ```
//!
//! satisfies `Ṡ = τ_ext θ̇ + f(θ̇, θ) θ̇ − B_imp θ̇² ≤ τ_ext θ̇` along closed-loop
//! trajectories.

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureLayout, Standardizer};
use crate::error::{Error, Result};
use crate::gp::{GpHyperparams, GpModel};
use crate::mixture::{MixtureState, TrainingSet};
use crate::sim::{step, ActuatorConfig, SimState};

/// Joint-space impedance `τ_imp = −K (θ − θ_des) − B θ̇`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceParams {
    /// K_imp (N·m/rad)
    pub stiffness: f64,
    /// B_imp (N·m·s/rad)
    pub damping: f64,
    /// θ_des (rad)
    pub target: f64,
    /// Desired inertia. Recorded for completeness only; the rendered inertia
    /// is always the physical one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
}

impl ImpedanceParams {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn stiffness(stiffness: f64, target: f64) -> Self {
        Self {
            stiffness,
            target,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("stiffness", self.stiffness), ("damping", self.damping)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("impedance {name} {v} must be ≥ 0")));
            }
        }
        if !self.target.is_finite() {
            return Err(Error::InvalidConfig("impedance target must be finite".into()));
        }
        Ok(())
    }
}

pub fn impedance_torque(ip: &ImpedanceParams, position: f64, velocity: f64) -> f64 {
    -ip.stiffness * (position - ip.target) - ip.damping * velocity
}

/// GP feedforward plus impedance.
#[derive(Clone, Debug)]
pub struct CompensationPolicy {
    gp: GpModel,
    standardizer: Standardizer,
    pub impedance: ImpedanceParams,
    /// Extra `gain · θ̇` added to the command. Anything positive injects
    /// energy; it exists so audits can be checked against a policy known to
    /// be active.
    pub viscous_injection: f64,
}

impl CompensationPolicy {
    /// `gp` must be trained on inputs mapped through `standardizer`.
    pub fn new(gp: GpModel, standardizer: Standardizer, impedance: ImpedanceParams) -> Result<Self> {
        impedance.validate()?;
        let dim = standardizer.layout.dim();
        if gp.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: gp.dim(),
            });
        }
        Ok(Self {
            gp,
            standardizer,
            impedance,
            viscous_injection: 0.0,
        })
    }

    /// Impedance only; the feedforward is the zero prior mean.
    pub fn uncompensated(layout: FeatureLayout, impedance: ImpedanceParams) -> Result<Self> {
        let h = GpHyperparams::new(1.0, 1.0, 1.0)?;
        Self::new(GpModel::prior(layout.dim(), h), Standardizer::identity(layout), impedance)
    }

    /// Feedforward from nominal mode `mode` of an identified mixture, fitted
    /// on that mode's members.
    pub fn from_mode(
        state: &MixtureState,
        mode: usize,
        data: &TrainingSet,
        standardizer: Standardizer,
        impedance: ImpedanceParams,
    ) -> Result<Self> {
        if mode >= state.nominal_count() {
            return Err(Error::InvalidConfig(format!(
                "mode {mode} is not one of the {} nominal modes",
                state.nominal_count()
            )));
        }
        let (x, y) = data.subset(&state.members(mode));
        let gp = if x.is_empty() {
            GpModel::prior(data.dim(), state.modes[mode])
        } else {
            GpModel::fit(&x, &y, state.modes[mode])?
        };
        Self::new(gp, standardizer, impedance)
    }

    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn sign_feature_enabled(&self) -> bool {
        self.standardizer.layout.has_sign()
    }

    /// Standardized feature vector for the rest state at `position`.
    fn rest_features(&self, position: f64) -> Vec<f64> {
        let raw = self.standardizer.layout.state_features(0.0, 0.0, position, 0);
        self.standardizer.apply(&raw)
    }

    /// `τ̂(0, 0, θ)`, with the sign coordinate at 0 when present.
    pub fn feedforward_torque(&self, position: f64) -> f64 {
        self.gp
            .mean(&self.rest_features(position))
            .expect("feature layout matches the model")
    }

    pub fn impedance_torque(&self, position: f64, velocity: f64) -> f64 {
        impedance_torque(&self.impedance, position, velocity)
    }

    /// Commanded actuator torque.
    pub fn torque(&self, position: f64, velocity: f64) -> f64 {
        self.feedforward_torque(position) + self.impedance_torque(position, velocity) + self.viscous_injection * velocity
    }

    /// `P(θ)` with `dP/dθ = τ_ff(θ)`.
    pub fn feedforward_potential(&self, position: f64) -> f64 {
        let x = self.rest_features(position);
        let s = self.standardizer.position_scale();
        s * self
            .gp
            .slice_potential(&x, FeatureLayout::POSITION, x[FeatureLayout::POSITION])
            .expect("feature layout matches the model")
    }

    /// Bound on `|P(θ)|` over all θ.
    pub fn potential_bound(&self) -> f64 {
        self.standardizer.position_scale() * self.gp.potential_bound()
    }

    /// Bound on `|τ_ff(θ)|` over all θ.
    pub fn feedforward_bound(&self) -> f64 {
        self.gp.mean_bound()
    }

    /// `S(θ, θ̇)` in joules.
    pub fn storage(&self, position: f64, velocity: f64, cfg: &ActuatorConfig) -> f64 {
        let dq = position - self.impedance.target;
        0.5 * cfg.inertia * velocity * velocity + cfg.gravity_potential(position) - self.feedforward_potential(position)
            + 0.5 * self.impedance.stiffness * dq * dq
    }

    /// Closed-form lower bound `min V_g − sup |P|` (the spring and kinetic
    /// terms are non-negative).
    pub fn storage_lower_bound(&self, cfg: &ActuatorConfig) -> f64 {
        cfg.gravity_potential_min() - self.potential_bound()
    }

    /// Numerical `inf S` over the rest states on a uniform grid of `points`
    /// positions spanning `range`.
    pub fn storage_infimum(&self, cfg: &ActuatorConfig, range: (f64, f64), points: usize) -> f64 {
        let points = points.max(2);
        let h = (range.1 - range.0) / (points - 1) as f64;
        (0..points)
            .map(|i| self.storage(range.0 + i as f64 * h, 0.0, cfg))
            .fold(f64::INFINITY, f64::min)
    }

    /// `S(x₀) − inf S`, the most energy the closed loop can hand back through
    /// its port when started from `x₀`.
    ///
    /// The infimum is searched over two gravity periods around the target
    /// plus the extent of the training data, and never goes below the
    /// analytic bound.
    pub fn available_energy(&self, initial: &SimState, cfg: &ActuatorConfig) -> f64 {
        let (lo, hi) = self.search_range();
        let inf = self
            .storage_infimum(cfg, (lo, hi), 40_001)
            .max(self.storage_lower_bound(cfg));
        self.storage(initial.position, initial.velocity, cfg) - inf
    }

    fn search_range(&self) -> (f64, f64) {
        let c = self.impedance.target;
        let (mut lo, mut hi) = (c - 2.0 * std::f64::consts::TAU, c + 2.0 * std::f64::consts::TAU);
        let st = &self.standardizer;
        let m = st.mean[FeatureLayout::POSITION];
        let s = st.position_scale();
        let reach = 5.0 * self.gp.hyperparams().length_scale();
        for i in 0..self.gp.len() {
            let z = self.gp.input(i)[FeatureLayout::POSITION];
            lo = lo.min(m + s * (z - reach));
            hi = hi.max(m + s * (z + reach));
        }
        (lo, hi)
    }
}

/// One closed-loop sample at the log rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub position: f64,
    pub velocity: f64,
    /// τ_cmd (N·m)
    pub command: f64,
    /// τ_ext at the interaction port (N·m)
    pub external: f64,
}

/// Options for [`simulate_closed_loop`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopOptions {
    pub duration: f64,
    /// Integrator step (s).
    pub dt: f64,
    /// Hz
    pub log_rate: f64,
    /// |θ̇| beyond this stops the run early (rad/s); the trace is returned
    /// up to that point.
    pub velocity_limit: f64,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            duration: 10.0,
            dt: 1e-4,
            log_rate: 1000.0,
            velocity_limit: 100.0,
        }
    }
}

/// Runs the policy on the plant. `external(t, state)` returns the torque the
/// environment applies at the port.
pub fn simulate_closed_loop<F>(
    policy: &CompensationPolicy,
    cfg: &ActuatorConfig,
    initial: SimState,
    opts: &LoopOptions,
    mut external: F,
) -> Result<Vec<TraceRow>>
where
    F: FnMut(f64, &SimState) -> f64,
{
    cfg.validate()?;
    if !(opts.duration > 0.0 && opts.dt > 0.0 && opts.log_rate > 0.0) {
        return Err(Error::InvalidConfig("loop duration, step and log rate must be > 0".into()));
    }
    let per_log = (1.0 / (opts.log_rate * opts.dt)).round().max(1.0) as usize;
    let dt = 1.0 / (opts.log_rate * per_log as f64);
    let steps = (opts.duration / dt).round() as usize;
    let mut state = initial;
    let mut trace = Vec::with_capacity(steps / per_log + 1);
    for i in 0..=steps {
        let t = initial.time + i as f64 * dt;
        let command = policy.torque(state.position, state.velocity);
        let ext = external(t, &state);
        if i % per_log == 0 {
            trace.push(TraceRow {
                time: t,
                position: state.position,
                velocity: state.velocity,
                command,
                external: ext,
            });
        }
        if i == steps || state.velocity.abs() > opts.velocity_limit {
            break;
        }
        state = step(&state, command, ext, dt, cfg)?;
    }
    Ok(trace)
}

/// One audit record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub time: f64,
    /// τ_ext θ̇ (W), positive into the actuator.
    pub power: f64,
    /// ∫ τ_ext θ̇ dt (J).
    pub energy: f64,
}

/// Port power and energy with a passivity verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub records: Vec<EnergyRecord>,
    /// S₀, energy available for extraction at the start (J).
    pub initial_storage: f64,
    pub tolerance: f64,
    /// `min_t (S₀ + E(t))`; negative below `−tolerance` is a violation.
    pub min_margin: f64,
    /// First time extracted energy exceeded `S₀ + tolerance`.
    pub violation: Option<f64>,
}

impl EnergyLedger {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }

    /// Largest energy taken out through the port at any time (J).
    pub fn max_extracted(&self) -> f64 {
        self.records.iter().map(|r| -r.energy).fold(0.0, f64::max)
    }

    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.energy)
    }
}

/// Trapezoidal integration of `τ θ̇` over a uniformly sampled port log.
pub fn energy_audit(
    times: &[f64],
    torques: &[f64],
    velocities: &[f64],
    initial_storage: f64,
    tolerance: f64,
) -> Result<EnergyLedger> {
    let n = times.len();
    if torques.len() != n {
        return Err(Error::LengthMismatch(n, torques.len()));
    }
    if velocities.len() != n {
        return Err(Error::LengthMismatch(n, velocities.len()));
    }
    if n >= 2 {
        let h = times[1] - times[0];
        if !(h > 0.0) {
            return Err(Error::NonUniformTimestamps { index: 1 });
        }
        for i in 2..n {
            let d = times[i] - times[i - 1];
            if (d - h).abs() > 1e-6 * h {
                return Err(Error::NonUniformTimestamps { index: i });
            }
        }
    }
    let mut records = Vec::with_capacity(n);
    let mut energy = 0.0;
    let mut min_margin = initial_storage;
    let mut violation = None;
    for i in 0..n {
        let power = torques[i] * velocities[i];
        if i > 0 {
            let prev: &EnergyRecord = &records[i - 1];
            energy += 0.5 * (prev.power + power) * (times[i] - times[i - 1]);
        }
        let margin = initial_storage + energy;
        min_margin = min_margin.min(margin);
        if violation.is_none() && margin < -tolerance {
            violation = Some(times[i]);
        }
        records.push(EnergyRecord {
            time: times[i],
            power,
            energy,
        });
    }
    Ok(EnergyLedger {
        records,
        initial_storage,
        tolerance,
        min_margin,
        violation,
    })
}

/// Audits a closed-loop trace at its port.
pub fn audit_trace(trace: &[TraceRow], initial_storage: f64, tolerance: f64) -> Result<EnergyLedger> {
    let t: Vec<f64> = trace.iter().map(|r| r.time).collect();
    let tau: Vec<f64> = trace.iter().map(|r| r.external).collect();
    let v: Vec<f64> = trace.iter().map(|r| r.velocity).collect();
    energy_audit(&t, &tau, &v, initial_storage, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gravity_policy() -> CompensationPolicy {
        let h = GpHyperparams::new(0.8, 1.0, 1e-4).unwrap();
        let layout = FeatureLayout::Nominal;
        let xs: Vec<Vec<f64>> = (0..25)
            .map(|i| vec![0.0, 0.0, -1.2 + 0.1 * i as f64])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 * x[2].sin()).collect();
        let gp = GpModel::fit(&xs, &ys, h).unwrap();
        CompensationPolicy::new(gp, Standardizer::identity(layout), ImpedanceParams::zero()).unwrap()
    }

    #[test]
    fn impedance_law() {
        let ip = ImpedanceParams::stiffness(3.5, 0.0);
        assert_eq!(impedance_torque(&ip, 1.0, 0.0), -3.5);
        assert_eq!(impedance_torque(&ip, 0.0, 0.0), 0.0);
        assert_eq!(impedance_torque(&ImpedanceParams::zero(), 0.7, -2.0), 0.0);
    }

    #[test]
    fn empty_policy_is_silent() {
        let p = CompensationPolicy::uncompensated(FeatureLayout::WithSign, ImpedanceParams::zero()).unwrap();
        for &th in &[-2.0, 0.0, 0.4] {
            assert_eq!(p.torque(th, 1.3), 0.0);
        }
        let cfg = ActuatorConfig::default();
        assert_eq!(p.storage(0.0, 0.0, &cfg), cfg.gravity_potential_min());
    }

    #[test]
    fn potential_gradient_is_feedforward() {
        let p = gravity_policy();
        for &th in &[-1.0, -0.3, 0.2, 0.9, 2.0] {
            let eps = 1e-5;
            let fd = (p.feedforward_potential(th + eps) - p.feedforward_potential(th - eps)) / (2.0 * eps);
            assert_relative_eq!(fd, p.feedforward_torque(th), epsilon = 1e-7);
        }
    }

    #[test]
    fn feedforward_tracks_gravity() {
        let p = gravity_policy();
        for i in 0..=20 {
            let th = -1.1 + 0.11 * i as f64;
            assert!((p.feedforward_torque(th) - 1.5 * th.sin()).abs() < 0.05 * 1.5);
        }
    }

    #[test]
    fn audit_rectangle_and_errors() {
        let t: Vec<f64> = (0..=200).map(|i| i as f64 * 0.01).collect();
        let ones = vec![1.0; t.len()];
        let l = energy_audit(&t, &ones, &ones, 0.0, 1e-3).unwrap();
        assert_relative_eq!(l.final_energy(), 2.0, epsilon = 1e-12);
        let zeros = vec![0.0; t.len()];
        assert_eq!(energy_audit(&t, &zeros, &ones, 0.0, 0.0).unwrap().final_energy(), 0.0);
        let mut bad = t.clone();
        bad[50] += 0.003;
        assert!(matches!(
            energy_audit(&bad, &ones, &ones, 0.0, 0.0),
            Err(Error::NonUniformTimestamps { .. })
        ));
        let neg = vec![-1.0; t.len()];
        let l = energy_audit(&t, &neg, &ones, 1.0, 1e-3).unwrap();
        assert!(!l.passed());
        assert!((l.violation.unwrap() - 1.01).abs() < 1e-9);
    }
}
