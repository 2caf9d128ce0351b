//! Exact Gaussian-process regression with the squared-exponential kernel.
//!
//! The model uses a zero prior mean and an isotropic length scale. Predictive
//! variances include the observation noise, since the mixture layer compares
//! observed torques (not latent function values) against them.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel parameters `{l, σ_y, σ_n}`. All three are strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHyperparams", into = "RawHyperparams")]
pub struct GpHyperparams {
    length_scale: f64,
    signal_variance: f64,
    noise_variance: f64,
}

#[derive(Serialize, Deserialize)]
struct RawHyperparams {
    length_scale: f64,
    signal_variance: f64,
    noise_variance: f64,
}

impl TryFrom<RawHyperparams> for GpHyperparams {
    type Error = Error;
    fn try_from(r: RawHyperparams) -> Result<Self> {
        GpHyperparams::new(r.length_scale, r.signal_variance, r.noise_variance)
    }
}

impl From<GpHyperparams> for RawHyperparams {
    fn from(h: GpHyperparams) -> Self {
        RawHyperparams {
            length_scale: h.length_scale,
            signal_variance: h.signal_variance,
            noise_variance: h.noise_variance,
        }
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidHyperparameter { name, value })
    }
}

impl GpHyperparams {
    pub fn new(length_scale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        Ok(Self {
            length_scale: check_positive("length_scale", length_scale)?,
            signal_variance: check_positive("signal_variance", signal_variance)?,
            noise_variance: check_positive("noise_variance", noise_variance)?,
        })
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Prior predictive variance `σ_y + σ_n`.
    pub fn prior_variance(&self) -> f64 {
        self.signal_variance + self.noise_variance
    }

    /// `(ln l, ln σ_y, ln σ_n)`, the coordinates the optimizer searches in.
    pub fn to_log(&self) -> [f64; 3] {
        [
            self.length_scale.ln(),
            self.signal_variance.ln(),
            self.noise_variance.ln(),
        ]
    }

    pub fn from_log(p: [f64; 3]) -> Result<Self> {
        Self::new(p[0].exp(), p[1].exp(), p[2].exp())
    }

    pub fn with_noise_variance(self, noise_variance: f64) -> Result<Self> {
        Self::new(self.length_scale, self.signal_variance, noise_variance)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn se(sq_dist: f64, h: &GpHyperparams) -> f64 {
    h.signal_variance * (-sq_dist / (h.length_scale * h.length_scale)).exp()
}

/// `σ_y exp(−‖x1−x2‖²/l²)`, plus `σ_n` when both arguments are the same sample.
pub fn se_kernel(x1: &[f64], x2: &[f64], h: &GpHyperparams, same_index: bool) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    let k = se(squared_distance(x1, x2), h);
    Ok(if same_index { k + h.noise_variance } else { k })
}

/// Gaussian predictive distribution of an observed torque.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    /// Log-density of `value` under `N(mean, variance + extra_variance)`.
    pub fn log_density(&self, value: f64, extra_variance: f64) -> f64 {
        normal_log_density(value - self.mean, self.variance + extra_variance)
    }
}

/// `log N(residual; 0, variance)`.
pub fn normal_log_density(residual: f64, variance: f64) -> f64 {
    -0.5 * ((2.0 * PI * variance).ln() + residual * residual / variance)
}

const JITTER_RETRIES: usize = 3;
const JITTER_BASE: f64 = 1e-10;

/// A fitted GP: training set, Cholesky factor of `K_D`, and `α = K_D⁻¹ y`.
///
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct GpModel {
    hyper: GpHyperparams,
    dim: usize,
    /// Row-major `n × dim`.
    inputs: Vec<f64>,
    targets: DVector<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// A model with no training data: posterior equals the prior.
    pub fn prior(dim: usize, hyper: GpHyperparams) -> Self {
        Self {
            hyper,
            dim,
            inputs: Vec::new(),
            targets: DVector::zeros(0),
            factor: None,
            alpha: DVector::zeros(0),
            jitter: 0.0,
        }
    }

    /// Fits the model on `(inputs, targets)`.
    ///
    /// If the Cholesky factorization fails, `1e-10·(σ_y+σ_n)` is added to the
    /// diagonal and escalated tenfold up to three times before giving up.
    pub fn fit<X: AsRef<[f64]>>(inputs: &[X], targets: &[f64], hyper: GpHyperparams) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch(inputs.len(), targets.len()));
        }
        let Some(first) = inputs.first() else {
            return Err(Error::TooFewSamples(0));
        };
        let dim = first.as_ref().len();
        let mut flat = Vec::with_capacity(inputs.len() * dim);
        for x in inputs {
            let x = x.as_ref();
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("training feature"));
            }
            flat.extend_from_slice(x);
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training target"));
        }
        Self::fit_flat(dim, flat, DVector::from_column_slice(targets), hyper)
    }

    fn fit_flat(dim: usize, inputs: Vec<f64>, targets: DVector<f64>, hyper: GpHyperparams) -> Result<Self> {
        let n = targets.len();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            let k = se(
                squared_distance(&inputs[i * dim..(i + 1) * dim], &inputs[j * dim..(j + 1) * dim]),
                &hyper,
            );
            if i == j {
                k + hyper.noise_variance
            } else {
                k
            }
        });

        let mut jitter = 0.0;
        let mut factor = gram.clone().cholesky();
        let mut step = JITTER_BASE * hyper.prior_variance();
        for _ in 0..JITTER_RETRIES {
            if factor.is_some() {
                break;
            }
            jitter = step;
            let mut jittered = gram.clone();
            for i in 0..n {
                jittered[(i, i)] += jitter;
            }
            factor = jittered.cholesky();
            step *= 10.0;
        }
        let factor = factor.ok_or(Error::NotPositiveDefinite { jitter })?;
        let alpha = factor.solve(&targets);

        Ok(Self {
            hyper,
            dim,
            inputs,
            targets,
            factor: Some(factor),
            alpha,
            jitter,
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Diagonal jitter that was needed to factorize `K_D` (0 in the usual case).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &[f64] {
        self.targets.as_slice()
    }

    /// `α = K_D⁻¹ y`.
    pub fn alpha(&self) -> &[f64] {
        self.alpha.as_slice()
    }

    /// Lower-triangular Cholesky factor of `K_D` (None for a prior model).
    pub fn factor(&self) -> Option<DMatrix<f64>> {
        self.factor.as_ref().map(|c| c.l())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Kernel row `k(x, x_i)` against every training input (no noise term).
    pub fn kernel_row(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(DVector::from_fn(self.len(), |i, _| {
            se(squared_distance(x, self.input(i)), &self.hyper)
        }))
    }

    /// Posterior mean `k*ᵀα`.
    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok((0..self.len())
            .map(|i| se(squared_distance(x, self.input(i)), &self.hyper) * self.alpha[i])
            .sum())
    }

    /// Noise-inclusive posterior predictive at `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<Posterior> {
        let k = self.kernel_row(x)?;
        let Some(factor) = &self.factor else {
            return Ok(Posterior {
                mean: 0.0,
                variance: self.hyper.prior_variance(),
            });
        };
        let mean = k.dot(&self.alpha);
        let v = factor
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("cholesky factor has a nonzero diagonal");
        let latent = (self.hyper.signal_variance - v.norm_squared()).max(0.0);
        Ok(Posterior {
            mean,
            variance: latent + self.hyper.noise_variance,
        })
    }

    /// `[K_D⁻¹]_ii` for a single index, by forward substitution on `L e_i`.
    fn precision_diag_at(&self, i: usize) -> f64 {
        let factor = self.factor.as_ref().expect("non-empty model");
        let l = factor.l_dirty();
        let n = self.len();
        let mut z = vec![0.0; n];
        z[i] = 1.0 / l[(i, i)];
        let mut acc = z[i] * z[i];
        for j in i + 1..n {
            let mut s = 0.0;
            for k in i..j {
                s += l[(j, k)] * z[k];
            }
            z[j] = -s / l[(j, j)];
            acc += z[j] * z[j];
        }
        acc
    }

    /// Held-out predictive for training sample `i` (the model refit without it),
    /// via `μ = y_i − α_i/[K⁻¹]_ii`, `Σ = 1/[K⁻¹]_ii`.
    pub fn held_out(&self, i: usize) -> Posterior {
        if self.len() == 1 {
            return Posterior {
                mean: 0.0,
                variance: self.hyper.prior_variance(),
            };
        }
        let p = self.precision_diag_at(i);
        Posterior {
            mean: self.targets[i] - self.alpha[i] / p,
            variance: 1.0 / p,
        }
    }

    /// Held-out predictives for every training sample.
    pub fn held_out_all(&self) -> Result<Vec<Posterior>> {
        if self.len() < 2 {
            return Err(Error::TooFewSamples(self.len()));
        }
        let factor = self.factor.as_ref().expect("non-empty model");
        let n = self.len();
        // diag(K⁻¹)_i is the squared norm of column i of L⁻¹.
        let l_inv = factor
            .l_dirty()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::NonFinite("triangular inverse"))?;
        Ok((0..n)
            .map(|i| {
                let p = l_inv.column(i).rows(i, n - i).norm_squared();
                Posterior {
                    mean: self.targets[i] - self.alpha[i] / p,
                    variance: 1.0 / p,
                }
            })
            .collect())
    }

    /// Hold-one-out likelihood `Σ_t −(τ_t−μ_t)² / Σ_t`.
    pub fn loo_log_likelihood(&self) -> Result<f64> {
        Ok(self
            .held_out_all()?
            .iter()
            .zip(self.targets.iter())
            .map(|(p, y)| -(y - p.mean).powi(2) / p.variance)
            .sum())
    }

    /// Hold-one-out log predictive density `Σ_t log N(τ_t; μ_t, Σ_t)`,
    /// i.e. the quadratic form above plus the Gaussian normalizer.
    pub fn loo_log_predictive(&self) -> Result<f64> {
        Ok(self
            .held_out_all()?
            .iter()
            .zip(self.targets.iter())
            .map(|(p, y)| p.log_density(*y, 0.0))
            .sum())
    }

    /// Antiderivative of the posterior mean along one coordinate.
    ///
    /// All coordinates other than `position_index` are held at the values in
    /// `slice`; the returned function of `position` satisfies
    /// `d/dθ slice_potential(slice, p, θ) = mean(slice with x[p] = θ)` exactly.
    pub fn slice_potential(&self, slice: &[f64], position_index: usize, position: f64) -> Result<f64> {
        self.check_dim(slice)?;
        if position_index >= self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: position_index + 1,
            });
        }
        let l = self.hyper.length_scale;
        let scale = self.hyper.signal_variance * l * PI.sqrt() / 2.0;
        let mut total = 0.0;
        for i in 0..self.len() {
            let xi = self.input(i);
            let off_axis: f64 = slice
                .iter()
                .zip(xi)
                .enumerate()
                .filter(|(j, _)| *j != position_index)
                .map(|(_, (a, b))| (a - b) * (a - b))
                .sum();
            let weight = (-off_axis / (l * l)).exp();
            total += self.alpha[i] * weight * scale * libm::erf((position - xi[position_index]) / l);
        }
        Ok(total)
    }

    /// `E(θ)·α` for a model trained on position alone, with
    /// `E_i(θ) = σ_y l (√π/2) erf((θ−θ_i)/l)`.
    pub fn kernel_potential(&self, position: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::NotPositionModel {
                expected: 1,
                got: self.dim,
            });
        }
        self.slice_potential(&[0.0], 0, position)
    }

    /// `σ_y l (√π/2) Σ|α_i|`, a bound on `|slice_potential|` for any slice.
    pub fn potential_bound(&self) -> f64 {
        let l = self.hyper.length_scale;
        self.hyper.signal_variance * l * PI.sqrt() / 2.0 * self.alpha.iter().map(|a| a.abs()).sum::<f64>()
    }

    /// `σ_y Σ|α_i|`, a bound on `|mean|` anywhere.
    pub fn mean_bound(&self) -> f64 {
        self.hyper.signal_variance * self.alpha.iter().map(|a| a.abs()).sum::<f64>()
    }
}
