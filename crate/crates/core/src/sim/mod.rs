//! One-degree-of-freedom actuator testbed.
//!
//! Rigid load with inertia `M`, gravity torque `A sin θ`, and dry + viscous
//! friction with a Stribeck peak:
//!
//! ```text
//! M θ̈ = τ_cmd + τ_ext − A sin θ + f(θ̇, θ)
//! f    = −sgn(θ̇) [γ(θ) τ_c + τ_s exp(−(θ̇/v_s)²)] − β θ̇      (θ̇ ≠ 0)
//! ```
//!
//! At rest, friction holds the load as long as the net applied torque stays
//! within the breakaway level `γ(θ) τ_c + τ_s`.

mod exploration;
pub mod filter;
mod perturbation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use exploration::{run_exploration, ExplorationConfig, PayloadPhase, PdGains, Waypoints};
pub use perturbation::{PerturbationProfile, PerturbationSignal, PerturbationWindow, TorqueProcess};

/// Standard gravity (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Physical parameters of the actuator and load.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorConfig {
    /// M (kg·m²)
    pub inertia: f64,
    /// β (N·m·s/rad)
    pub viscous: f64,
    /// τ_c (N·m)
    pub coulomb: f64,
    /// τ_s, breakaway excess over coulomb at rest (N·m)
    pub stribeck_excess: f64,
    /// v_s (rad/s)
    pub stribeck_velocity: f64,
    /// A = m g r (N·m), gravity torque `A sin θ`
    pub gravity_amplitude: f64,
    /// `a` in the load-dependent coulomb modulation `γ(θ) = 1 + a |sin θ|`
    pub coulomb_load_gain: f64,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        Self {
            inertia: 0.73,
            viscous: 0.05,
            coulomb: 0.15,
            stribeck_excess: 0.3,
            stribeck_velocity: 0.03,
            gravity_amplitude: 2.5,
            coulomb_load_gain: 0.5,
        }
    }
}

impl ActuatorConfig {
    /// Inertia-only plant: no gravity, no friction.
    pub fn ideal(inertia: f64) -> Self {
        Self {
            inertia,
            viscous: 0.0,
            coulomb: 0.0,
            stribeck_excess: 0.0,
            stribeck_velocity: 0.0,
            gravity_amplitude: 0.0,
            coulomb_load_gain: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("viscous", self.viscous),
            ("coulomb", self.coulomb),
            ("stribeck_excess", self.stribeck_excess),
            ("stribeck_velocity", self.stribeck_velocity),
            ("coulomb_load_gain", self.coulomb_load_gain),
        ];
        if !(self.inertia.is_finite() && self.inertia > 0.0) {
            return Err(Error::InvalidConfig(format!("inertia {} must be > 0", self.inertia)));
        }
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} {v} must be ≥ 0")));
            }
        }
        if !self.gravity_amplitude.is_finite() {
            return Err(Error::InvalidConfig("gravity amplitude must be finite".into()));
        }
        Ok(())
    }

    /// γ(θ)
    pub fn coulomb_modulation(&self, position: f64) -> f64 {
        1.0 + self.coulomb_load_gain * position.sin().abs()
    }

    /// Torque needed to start motion from rest at `position`.
    pub fn breakaway(&self, position: f64) -> f64 {
        self.coulomb_modulation(position) * self.coulomb + self.stribeck_excess
    }

    /// g(θ)
    pub fn gravity_torque(&self, position: f64) -> f64 {
        self.gravity_amplitude * position.sin()
    }

    /// V_g(θ) = A (1 − cos θ), with `∂V_g/∂θ = g(θ)`.
    pub fn gravity_potential(&self, position: f64) -> f64 {
        self.gravity_amplitude * (1.0 - position.cos())
    }

    /// Global minimum of `V_g`.
    pub fn gravity_potential_min(&self) -> f64 {
        if self.gravity_amplitude >= 0.0 {
            0.0
        } else {
            2.0 * self.gravity_amplitude
        }
    }

    /// Kinetic plus gravitational energy.
    pub fn mechanical_energy(&self, s: &SimState) -> f64 {
        0.5 * self.inertia * s.velocity * s.velocity + self.gravity_potential(s.position)
    }
}

/// Adds a point mass `mass` (kg) at `radius` (m) to the load.
pub fn attach_payload(cfg: &ActuatorConfig, mass: f64, radius: f64) -> Result<ActuatorConfig> {
    if !(mass.is_finite() && mass >= 0.0 && radius.is_finite()) {
        return Err(Error::InvalidConfig(format!("payload mass {mass} at radius {radius}")));
    }
    Ok(ActuatorConfig {
        inertia: cfg.inertia + mass * radius * radius,
        gravity_amplitude: cfg.gravity_amplitude + mass * GRAVITY * radius,
        ..*cfg
    })
}

/// Friction torque.
///
/// While moving this is the Coulomb + Stribeck + viscous law. At rest it is
/// static friction opposing `applied` (the net non-friction torque), capped
/// at the breakaway level.
pub fn friction_torque(velocity: f64, position: f64, applied: f64, cfg: &ActuatorConfig) -> f64 {
    if velocity == 0.0 {
        let limit = cfg.breakaway(position);
        return -applied.clamp(-limit, limit);
    }
    let stribeck = if cfg.stribeck_velocity > 0.0 {
        cfg.stribeck_excess * (-(velocity / cfg.stribeck_velocity).powi(2)).exp()
    } else {
        0.0
    };
    -velocity.signum() * (cfg.coulomb_modulation(position) * cfg.coulomb + stribeck) - cfg.viscous * velocity
}

/// Integrator state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// θ (rad)
    pub position: f64,
    /// θ̇ (rad/s)
    pub velocity: f64,
    /// t (s)
    pub time: f64,
}

impl SimState {
    pub fn at_rest(position: f64) -> Self {
        Self {
            position,
            velocity: 0.0,
            time: 0.0,
        }
    }
}

/// Semi-implicit Euler step with stick-slip handling.
///
/// From rest, the load stays put while `|τ_cmd + τ_ext − g(θ)|` is within
/// breakaway. A velocity that would change sign during the step is snapped to
/// zero, so every reversal passes through the stiction check.
pub fn step(s: &SimState, torque_cmd: f64, torque_ext: f64, dt: f64, cfg: &ActuatorConfig) -> Result<SimState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step {dt}")));
    }
    if ![s.position, s.velocity, s.time, torque_cmd, torque_ext]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite("simulator input"));
    }
    let applied = torque_cmd + torque_ext - cfg.gravity_torque(s.position);
    let time = s.time + dt;
    if s.velocity == 0.0 {
        let limit = cfg.breakaway(s.position);
        if applied.abs() <= limit {
            return Ok(SimState { time, ..*s });
        }
        let accel = (applied - applied.signum() * limit) / cfg.inertia;
        let velocity = accel * dt;
        return Ok(SimState {
            position: s.position + velocity * dt,
            velocity,
            time,
        });
    }
    let friction = friction_torque(s.velocity, s.position, applied, cfg);
    let accel = (applied + friction) / cfg.inertia;
    let mut velocity = s.velocity + accel * dt;
    if velocity * s.velocity < 0.0 {
        velocity = 0.0;
    }
    Ok(SimState {
        position: s.position + velocity * dt,
        velocity,
        time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stiction_below_breakaway() {
        let cfg = ActuatorConfig::default();
        let s = SimState::at_rest(0.0);
        let next = step(&s, 0.9 * cfg.breakaway(0.0), 0.0, 1e-4, &cfg).unwrap();
        assert_eq!(next.position, 0.0);
        assert_eq!(next.velocity, 0.0);
        assert_eq!(friction_torque(0.0, 0.0, 0.2, &cfg), -0.2);
    }

    #[test]
    fn high_speed_friction_is_coulomb_plus_viscous() {
        let cfg = ActuatorConfig::default();
        let v = 50.0;
        let f = friction_torque(v, 0.4, 0.0, &cfg);
        assert_relative_eq!(f, -cfg.viscous * v - cfg.coulomb_modulation(0.4) * cfg.coulomb, epsilon = 1e-12);
    }

    #[test]
    fn friction_is_odd_in_velocity() {
        let cfg = ActuatorConfig::default();
        for &v in &[1e-3, 0.02, 0.3, 4.0] {
            for &th in &[-1.0, 0.0, 0.7] {
                assert_eq!(friction_torque(-v, th, 0.0, &cfg), -friction_torque(v, th, 0.0, &cfg));
            }
        }
    }

    #[test]
    fn double_integrator_is_exact_in_velocity() {
        let cfg = ActuatorConfig::ideal(0.73);
        let mut s = SimState::at_rest(0.0);
        let dt = 1e-3;
        for _ in 0..1000 {
            s = step(&s, 2.0, 0.0, dt, &cfg).unwrap();
        }
        assert_relative_eq!(s.velocity, 2.0 * s.time / 0.73, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = ActuatorConfig::default();
        let s = SimState::at_rest(0.0);
        assert!(step(&s, f64::NAN, 0.0, 1e-4, &cfg).is_err());
        assert!(step(&s, 0.0, 0.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn payload_scaling() {
        let cfg = ActuatorConfig::default();
        assert_eq!(attach_payload(&cfg, 0.0, 0.3).unwrap(), cfg);
        let one = attach_payload(&cfg, 0.2, 0.3).unwrap();
        let two = attach_payload(&cfg, 0.4, 0.3).unwrap();
        let added1 = one.gravity_amplitude - cfg.gravity_amplitude;
        let added2 = two.gravity_amplitude - cfg.gravity_amplitude;
        assert_relative_eq!(added2, 2.0 * added1, max_relative = 1e-12);
        assert!(attach_payload(&cfg, -1.0, 0.3).is_err());
    }
}
