//! Evaluation: classification scoring, impedance-rendering
//! experiments, equilibrium error under a gravity-model mismatch, and the
//! impulse-train passivity audit.

use serde::{Deserialize, Serialize};

use crate::compensation::{audit_trace, simulate_closed_loop, CompensationPolicy, EnergyLedger, LoopOptions, TraceRow};
use crate::error::{Error, Result};
use crate::sim::{ActuatorConfig, PerturbationProfile, PerturbationSignal, SimState};

/// Largest label count for which the permutation search is exhaustive.
const EXHAUSTIVE_MATCHING: usize = 6;

/// Confusion matrix between ground-truth and predicted modes, with predicted
/// labels already mapped onto the truth labels that agree with them most.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// `counts[true][pred]`, square with side `modes`.
    pub counts: Vec<Vec<usize>>,
    /// `mapping[raw predicted label] = aligned label`.
    pub mapping: Vec<usize>,
}

impl ConfusionCounts {
    pub fn modes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Samples whose true mode is `mode`.
    pub fn support(&self, mode: usize) -> usize {
        self.counts.get(mode).map_or(0, |r| r.iter().sum())
    }

    pub fn count(&self, truth: usize, pred: usize) -> usize {
        self.counts.get(truth).and_then(|r| r.get(pred)).copied().unwrap_or(0)
    }

    /// Fraction of true-`truth` samples predicted as `pred` (0 if none).
    pub fn rate(&self, truth: usize, pred: usize) -> f64 {
        let n = self.support(truth);
        if n == 0 {
            0.0
        } else {
            self.count(truth, pred) as f64 / n as f64
        }
    }

    pub fn correct(&self) -> usize {
        (0..self.modes()).map(|k| self.counts[k][k]).sum()
    }

    /// Overall label agreement after alignment.
    pub fn agreement(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            0.0
        } else {
            self.correct() as f64 / n as f64
        }
    }
}

/// Scores hard predictions against ground truth, resolving the label
/// permutation by maximum agreement.
pub fn score_classification(pred: &[usize], truth: &[usize]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    let k = pred.iter().chain(truth).copied().max().map_or(1, |m| m + 1);
    let mut raw = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        raw[t][p] += 1;
    }
    let mapping = best_mapping(&raw);
    let mut counts = vec![vec![0usize; k]; k];
    for t in 0..k {
        for p in 0..k {
            counts[t][mapping[p]] += raw[t][p];
        }
    }
    Ok(ConfusionCounts { counts, mapping })
}

/// Scores per-sample posteriors by their arg-max.
pub fn score_posteriors(posteriors: &[Vec<f64>], truth: &[usize]) -> Result<ConfusionCounts> {
    let pred: Vec<usize> = posteriors.iter().map(|p| argmax(p)).collect();
    score_classification(&pred, truth)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// `mapping[p]` maximizing `Σ_p raw[mapping[p]][p]`.
fn best_mapping(raw: &[Vec<usize>]) -> Vec<usize> {
    let k = raw.len();
    let score = |m: &[usize]| -> usize { (0..k).map(|p| raw[m[p]][p]).sum() };
    if k <= EXHAUSTIVE_MATCHING {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = perm.clone();
        let mut best_score = score(&perm);
        // Heap's algorithm; ties keep the earliest permutation, which is the
        // identity when it is optimal.
        let mut c = vec![0usize; k];
        let mut i = 0;
        while i < k {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                let s = score(&perm);
                if s > best_score {
                    best_score = s;
                    best.clone_from(&perm);
                }
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        return best;
    }
    // Greedy on the largest remaining cell.
    let mut mapping = vec![usize::MAX; k];
    let mut used = vec![false; k];
    let mut cells: Vec<(usize, usize, usize)> = (0..k)
        .flat_map(|t| (0..k).map(move |p| (raw[t][p], t, p)))
        .collect();
    cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, t, p) in cells {
        if mapping[p] == usize::MAX && !used[t] {
            mapping[p] = t;
            used[t] = true;
        }
    }
    mapping
}

/// Uncompensated and compensated results of one rendering experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderingComparison<M> {
    pub uncompensated: M,
    pub compensated: M,
    #[serde(skip)]
    pub uncompensated_trace: Vec<TraceRow>,
    #[serde(skip)]
    pub compensated_trace: Vec<TraceRow>,
}

/// Port torque while an external agent drags the load.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragMetrics {
    /// RMS port torque over the constant-velocity segments (N·m).
    pub rms_torque: f64,
    /// Largest port torque after the initial settle (N·m).
    pub peak_torque: f64,
    /// Largest port torque while starting each stroke from rest (N·m).
    pub breakaway_peak: f64,
}

/// Constant-velocity drag through a range and back.
///
/// The agent is a stiff spring-damper whose anchor follows a trapezoidal
/// velocity profile: dwell, ramp up, cruise, ramp down, dwell, then the same
/// in reverse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DragOptions {
    /// Cruise speed (rad/s).
    pub velocity: f64,
    pub range: (f64, f64),
    /// Duration of each velocity ramp (s).
    pub ramp: f64,
    /// Rest at each end of a stroke (s).
    pub dwell: f64,
    /// Coupling spring (N·m/rad).
    pub coupling_stiffness: f64,
    /// Coupling damper (N·m·s/rad).
    pub coupling_damping: f64,
    pub dt: f64,
    /// Hz
    pub log_rate: f64,
}

impl Default for DragOptions {
    fn default() -> Self {
        Self {
            velocity: 0.1,
            range: (-0.8, 0.8),
            ramp: 0.5,
            dwell: 1.0,
            coupling_stiffness: 500.0,
            coupling_damping: 40.0,
            dt: 1e-4,
            log_rate: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DragPhase {
    Dwell,
    Ramp,
    Cruise,
}

impl DragOptions {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        let stroke = hi - lo;
        let ok = self.velocity > 0.0
            && self.ramp >= 0.0
            && self.dwell >= 0.0
            && self.coupling_stiffness > 0.0
            && self.coupling_damping >= 0.0
            && self.dt > 0.0
            && self.log_rate > 0.0
            && stroke.is_finite()
            && stroke > self.velocity * self.ramp;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("drag options {self:?}")))
        }
    }

    fn cruise_time(&self) -> f64 {
        (self.range.1 - self.range.0) / self.velocity - self.ramp
    }

    fn stroke_time(&self) -> f64 {
        self.cruise_time() + 2.0 * self.ramp
    }

    /// Whole experiment: dwell, forward stroke, dwell, return stroke, dwell.
    pub fn duration(&self) -> f64 {
        3.0 * self.dwell + 2.0 * self.stroke_time()
    }

    /// Anchor (position, velocity, phase) at `t`.
    fn anchor(&self, t: f64) -> (f64, f64, DragPhase) {
        let (lo, hi) = self.range;
        let stroke = self.stroke_time();
        let mut s = t - self.dwell;
        if s < 0.0 {
            return (lo, 0.0, DragPhase::Dwell);
        }
        if s < stroke {
            let (d, v, p) = self.stroke(s);
            return (lo + d, v, p);
        }
        s -= stroke + self.dwell;
        if s < 0.0 {
            return (hi, 0.0, DragPhase::Dwell);
        }
        if s < stroke {
            let (d, v, p) = self.stroke(s);
            return (hi - d, -v, p);
        }
        (lo, 0.0, DragPhase::Dwell)
    }

    /// Distance, speed and phase `s` seconds into a stroke.
    fn stroke(&self, s: f64) -> (f64, f64, DragPhase) {
        let v = self.velocity;
        let a = if self.ramp > 0.0 { v / self.ramp } else { 0.0 };
        let cruise = self.cruise_time();
        if s < self.ramp {
            (0.5 * a * s * s, a * s, DragPhase::Ramp)
        } else if s < self.ramp + cruise {
            (0.5 * v * self.ramp + v * (s - self.ramp), v, DragPhase::Cruise)
        } else {
            let r = (self.stroke_time() - s).max(0.0);
            let total = self.range.1 - self.range.0;
            (total - 0.5 * a * r * r, a * r, DragPhase::Ramp)
        }
    }

    /// True within the ramp-up of a stroke and its first second of cruise.
    fn is_departure(&self, t: f64) -> bool {
        let stroke = self.stroke_time();
        let starts = [self.dwell, 2.0 * self.dwell + stroke];
        starts.iter().any(|&s0| t >= s0 && t < s0 + self.ramp + 1.0)
    }
}

fn drag_run(policy: &CompensationPolicy, cfg: &ActuatorConfig, opts: &DragOptions) -> Result<(DragMetrics, Vec<TraceRow>)> {
    let lo = LoopOptions {
        duration: opts.duration(),
        dt: opts.dt,
        log_rate: opts.log_rate,
        velocity_limit: 100.0,
    };
    let trace = simulate_closed_loop(policy, cfg, SimState::at_rest(opts.range.0), &lo, |t, s| {
        let (p, v, _) = opts.anchor(t);
        opts.coupling_stiffness * (p - s.position) + opts.coupling_damping * (v - s.velocity)
    })?;
    let mut sq = 0.0;
    let mut n = 0usize;
    let mut peak: f64 = 0.0;
    let mut breakaway: f64 = 0.0;
    for r in &trace {
        if r.time < opts.dwell {
            continue;
        }
        let tau = r.external.abs();
        peak = peak.max(tau);
        if opts.is_departure(r.time) {
            breakaway = breakaway.max(tau);
        }
        if opts.anchor(r.time).2 == DragPhase::Cruise {
            sq += r.external * r.external;
            n += 1;
        }
    }
    let rms_torque = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };
    Ok((
        DragMetrics {
            rms_torque,
            peak_torque: peak,
            breakaway_peak: breakaway,
        },
        trace,
    ))
}

/// Zero-impedance rendering: drags the load with and without the GP
/// feedforward and compares the torque the agent has to apply.
///
/// The uncompensated run keeps the policy's impedance and drops the
/// feedforward.
pub fn zero_impedance_test(
    policy: &CompensationPolicy,
    cfg: &ActuatorConfig,
    opts: &DragOptions,
) -> Result<RenderingComparison<DragMetrics>> {
    opts.validate()?;
    let bare = CompensationPolicy::uncompensated(policy.standardizer().layout, policy.impedance)?;
    let (uncompensated, uncompensated_trace) = drag_run(&bare, cfg, opts)?;
    let (compensated, compensated_trace) = drag_run(policy, cfg, opts)?;
    Ok(RenderingComparison {
        uncompensated,
        compensated,
        uncompensated_trace,
        compensated_trace,
    })
}

/// Torque-deflection behaviour under a slow external torque cycle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiffnessMetrics {
    /// `max |τ_ext − K Δθ|` over the measured cycle (N·m).
    pub max_deviation: f64,
    /// Largest deflection gap between the unloading and loading branches at
    /// equal external torque (rad).
    pub hysteresis_width: f64,
    /// Mean of that gap over the compared torque levels (rad).
    pub mean_hysteresis: f64,
    /// Mean |Δθ| where the external torque crosses zero (rad).
    pub rest_error: f64,
}

/// External torque `τ_ext(t) = −A cos(2πt/P)` applied for 1.5 periods from
/// rest at the ideal equilibrium. The first half period is a lead-in; the
/// unloading half and the following loading half are measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StiffnessOptions {
    /// A (N·m)
    pub amplitude: f64,
    /// P (s)
    pub period: f64,
    /// Fraction of ±A over which the branches are compared.
    pub compare_fraction: f64,
    /// Torque levels at which the branches are compared.
    pub levels: usize,
    pub dt: f64,
    /// Hz
    pub log_rate: f64,
}

impl Default for StiffnessOptions {
    fn default() -> Self {
        Self {
            amplitude: 2.0,
            period: 40.0,
            compare_fraction: 0.8,
            levels: 81,
            dt: 1e-4,
            log_rate: 100.0,
        }
    }
}

/// Deflection on a branch at torque level `tau`, interpolated in time.
/// `rows` must have monotone external torque.
fn branch_deflection(rows: &[(f64, f64)], tau: f64) -> Option<f64> {
    rows.windows(2).find_map(|w| {
        let ((t0, d0), (t1, d1)) = (w[0], w[1]);
        let inside = (t0 - tau) * (t1 - tau) <= 0.0 && t0 != t1;
        inside.then(|| d0 + (d1 - d0) * (tau - t0) / (t1 - t0))
    })
}

fn stiffness_run(
    policy: &CompensationPolicy,
    cfg: &ActuatorConfig,
    opts: &StiffnessOptions,
) -> Result<(StiffnessMetrics, Vec<TraceRow>)> {
    let k = policy.impedance.stiffness;
    let target = policy.impedance.target;
    let w = std::f64::consts::TAU / opts.period;
    let lo = LoopOptions {
        duration: 1.5 * opts.period,
        dt: opts.dt,
        log_rate: opts.log_rate,
        velocity_limit: 100.0,
    };
    let start = SimState::at_rest(target - opts.amplitude / k);
    let trace = simulate_closed_loop(policy, cfg, start, &lo, |t, _| -opts.amplitude * (w * t).cos())?;

    let half = 0.5 * opts.period;
    let measured: Vec<&TraceRow> = trace.iter().filter(|r| r.time >= half).collect();
    let max_deviation = measured
        .iter()
        .map(|r| (r.external - k * (r.position - target)).abs())
        .fold(0.0, f64::max);
    let unloading: Vec<(f64, f64)> = measured
        .iter()
        .filter(|r| r.time <= opts.period)
        .map(|r| (r.external, r.position - target))
        .collect();
    let loading: Vec<(f64, f64)> = measured
        .iter()
        .filter(|r| r.time >= opts.period)
        .map(|r| (r.external, r.position - target))
        .collect();

    let levels = opts.levels.max(2);
    let span = opts.compare_fraction * opts.amplitude;
    let mut gaps = Vec::with_capacity(levels);
    for i in 0..levels {
        let tau = -span + 2.0 * span * i as f64 / (levels - 1) as f64;
        if let (Some(a), Some(b)) = (branch_deflection(&unloading, tau), branch_deflection(&loading, tau)) {
            gaps.push(a - b);
        }
    }
    let hysteresis_width = gaps.iter().copied().fold(0.0, f64::max);
    let mean_hysteresis = if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    let rest: Vec<f64> = [&unloading, &loading]
        .iter()
        .filter_map(|b| branch_deflection(b, 0.0))
        .map(f64::abs)
        .collect();
    let rest_error = if rest.is_empty() {
        0.0
    } else {
        rest.iter().sum::<f64>() / rest.len() as f64
    };
    Ok((
        StiffnessMetrics {
            max_deviation,
            hysteresis_width,
            mean_hysteresis,
            rest_error,
        },
        trace,
    ))
}

/// Pure-stiffness rendering with and without the GP feedforward.
pub fn stiffness_rendering_test(
    policy: &CompensationPolicy,
    cfg: &ActuatorConfig,
    opts: &StiffnessOptions,
) -> Result<RenderingComparison<StiffnessMetrics>> {
    policy.impedance.validate()?;
    if !(policy.impedance.stiffness > 0.0) {
        return Err(Error::InvalidConfig("stiffness rendering needs K_imp > 0".into()));
    }
    if !(opts.amplitude > 0.0 && opts.period > 0.0 && opts.compare_fraction > 0.0 && opts.compare_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("stiffness options {opts:?}")));
    }
    let bare = CompensationPolicy::uncompensated(policy.standardizer().layout, policy.impedance)?;
    let (uncompensated, uncompensated_trace) = stiffness_run(&bare, cfg, opts)?;
    let (compensated, compensated_trace) = stiffness_run(policy, cfg, opts)?;
    Ok(RenderingComparison {
        uncompensated,
        compensated,
        uncompensated_trace,
        compensated_trace,
    })
}

/// Smallest hysteresis the friction model allows: kinetic friction opposes
/// the motion on both branches, separating them by `2 γ τ_c / K` at the
/// least-loaded position.
pub fn hysteresis_lower_bound(cfg: &ActuatorConfig, stiffness: f64) -> f64 {
    2.0 * cfg.coulomb / stiffness
}

/// Static deflection under gravity-model error at one stiffness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRow {
    pub stiffness: f64,
    /// θ_eq − θ_des (rad)
    pub deflection: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const EQUILIBRIUM_MAX_ITERATIONS: usize = 1000;

/// Solves `K δ = g̃(θ_des + δ)` by fixed-point iteration for each stiffness.
/// Rows that do not settle within [`EQUILIBRIUM_MAX_ITERATIONS`] are
/// returned with `converged = false`.
pub fn equilibrium_error_report<G>(gravity_error: G, target: f64, stiffness: &[f64]) -> Result<Vec<EquilibriumRow>>
where
    G: Fn(f64) -> f64,
{
    stiffness
        .iter()
        .map(|&k| {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::InvalidConfig(format!("stiffness {k} must be > 0")));
            }
            let mut delta = 0.0;
            for it in 1..=EQUILIBRIUM_MAX_ITERATIONS {
                let next = gravity_error(target + delta) / k;
                if !next.is_finite() {
                    return Err(Error::NonFinite("equilibrium iterate"));
                }
                let settled = (next - delta).abs() <= 1e-15 * next.abs().max(1.0);
                delta = next;
                if settled {
                    return Ok(EquilibriumRow {
                        stiffness: k,
                        deflection: delta,
                        iterations: it,
                        converged: true,
                    });
                }
            }
            Ok(EquilibriumRow {
                stiffness: k,
                deflection: delta,
                iterations: EQUILIBRIUM_MAX_ITERATIONS,
                converged: false,
            })
        })
        .collect()
}

/// Impulse-train impact scenario for the passivity audit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpactOptions {
    pub duration: f64,
    /// Time of the first impulse (s).
    pub first: f64,
    /// Spacing between impulses (s).
    pub period: f64,
    /// Impulse peak as a multiple of the breakaway torque at the target.
    pub breakaway_multiple: f64,
    /// Absolute impulse peak (N·m); overrides `breakaway_multiple` when set.
    pub peak: Option<f64>,
    /// Half-sine duration (s).
    pub width: f64,
    /// Passive damper on the environment side of the port (N·m·s/rad).
    pub environment_damping: f64,
    /// J
    pub tolerance: f64,
    pub dt: f64,
    /// Hz
    pub log_rate: f64,
}

impl Default for ImpactOptions {
    fn default() -> Self {
        Self {
            duration: 60.0,
            first: 1.0,
            period: 2.0,
            breakaway_multiple: 5.0,
            peak: None,
            width: 0.05,
            environment_damping: 0.0,
            tolerance: 1e-3,
            dt: 1e-4,
            log_rate: 1000.0,
        }
    }
}

impl ImpactOptions {
    pub fn profile(&self, cfg: &ActuatorConfig, target: f64) -> Result<PerturbationProfile> {
        if !(self.period > self.width && self.duration > 0.0 && self.environment_damping >= 0.0) {
            return Err(Error::InvalidConfig(format!("impact options {self:?}")));
        }
        let count = ((self.duration - self.first) / self.period).floor().max(0.0) as usize + 1;
        let magnitude = self.peak.unwrap_or(self.breakaway_multiple * cfg.breakaway(target));
        PerturbationProfile::impulse_train(self.first, self.period, count, magnitude, self.width)
    }
}

/// Passivity audit result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassivityReport {
    pub ledger: EnergyLedger,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    /// The run stopped early on the velocity limit.
    pub diverged: bool,
}

impl PassivityReport {
    pub fn passed(&self) -> bool {
        self.ledger.passed()
    }
}

/// Strikes the load with an impulse train from rest at the impedance target
/// and audits the port energy against the storage available at the start.
pub fn passivity_impulse_test(
    policy: &CompensationPolicy,
    cfg: &ActuatorConfig,
    opts: &ImpactOptions,
) -> Result<PassivityReport> {
    let target = policy.impedance.target;
    let mut signal = PerturbationSignal::new(opts.profile(cfg, target)?, 0);
    let initial = SimState::at_rest(target);
    let lo = LoopOptions {
        duration: opts.duration,
        dt: opts.dt,
        log_rate: opts.log_rate,
        velocity_limit: 100.0,
    };
    let dt = opts.dt;
    let b = opts.environment_damping;
    let trace = simulate_closed_loop(policy, cfg, initial, &lo, |t, s| signal.torque(t, dt) - b * s.velocity)?;
    let diverged = trace.last().is_some_and(|r| r.time < opts.duration - 0.5 / opts.log_rate);
    let s0 = policy.available_energy(&initial, cfg);
    let ledger = audit_trace(&trace, s0, opts.tolerance)?;
    Ok(PassivityReport { ledger, trace, diverged })
}
