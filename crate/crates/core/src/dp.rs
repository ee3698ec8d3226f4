//! Sparse-vector-technique filter for flattened client deltas.
//!
//! Pipeline per call: normalize by local step count, clip to `±gamma`, draw a
//! noisy threshold `tau + Laplace(2·gamma/epsilon)`, release components whose
//! noisy magnitude clears it (index order, at most `ceil(fraction·n)`),
//! perturb and re-clip the released ones, zero the rest, and scale back up by
//! the step count.

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::param::FlatVector;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("invalid SVT parameter: {0}")]
    Config(String),
    #[error("local step count must be at least 1")]
    ZeroSteps,
    #[error("delta contains non-finite values")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvtConfig {
    /// Share of components that may be released, in (0, 1].
    pub fraction: f64,
    pub epsilon: f64,
    /// Variance of the Laplace noise added to released components.
    pub noise_var: f64,
    /// Clipping bound.
    pub gamma: f64,
    /// Baseline threshold. `-inf` releases everything (up to the cap).
    pub tau: f64,
}

impl SvtConfig {
    pub fn new(fraction: f64, epsilon: f64, noise_var: f64, gamma: f64, tau: f64) -> Result<Self, DpError> {
        let cfg = SvtConfig { fraction, epsilon, noise_var, gamma, tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DpError> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(DpError::Config(format!("fraction must be in (0, 1], got {}", self.fraction)));
        }
        for (name, v) in [("epsilon", self.epsilon), ("noise_var", self.noise_var), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DpError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.tau.is_nan() || self.tau == f64::INFINITY {
            return Err(DpError::Config(format!("tau must be a real number or -inf, got {}", self.tau)));
        }
        Ok(())
    }

    /// Maximum number of released components for an `n`-vector.
    pub fn release_cap(&self, n: usize) -> usize {
        ((self.fraction * n as f64).ceil() as usize).min(n)
    }

    /// Laplace scale of the value perturbation: variance `2b²` equals `noise_var`.
    pub fn value_noise_scale(&self) -> f64 {
        (self.noise_var / 2.0).sqrt()
    }
}

/// Threshold noise scale `2·gamma/epsilon`.
pub fn noise_scale(gamma: f64, epsilon: f64) -> Result<f64, DpError> {
    if !(gamma > 0.0 && gamma.is_finite()) || !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(DpError::Config(format!("gamma and epsilon must be positive, got {gamma}, {epsilon}")));
    }
    Ok(2.0 * gamma / epsilon)
}

/// Inverse CDF of Laplace(0, b) at `u ∈ (-1/2, 1/2)`.
pub fn laplace_from_uniform(u: f64, b: f64) -> f64 {
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Laplace(0, b) sampler over any RNG. Each draw consumes one uniform from
/// the open interval (0, 1).
pub struct LaplaceSampler<R> {
    rng: R,
    scale: f64,
}

impl<R: Rng> LaplaceSampler<R> {
    pub fn new(rng: R, scale: f64) -> Result<Self, DpError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DpError::Config(format!("Laplace scale must be positive, got {scale}")));
        }
        Ok(LaplaceSampler { rng, scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample(&mut self) -> f64 {
        laplace(&mut self.rng, self.scale)
    }

    pub fn into_inner(self) -> R {
        self.rng
    }
}

/// One Laplace(0, b) draw.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    let v: f64 = rng.sample(Open01);
    laplace_from_uniform(v - 0.5, b)
}

/// Applies the SVT filter. Random draws happen in this order: the threshold
/// noise, one query noise per scanned index (scanning stops once the cap is
/// reached), then one value noise per released index in index order.
pub fn svt_filter<R: Rng + ?Sized>(delta: &FlatVector, steps: u64, cfg: &SvtConfig, rng: &mut R) -> Result<FlatVector, DpError> {
    cfg.validate()?;
    if steps == 0 {
        return Err(DpError::ZeroSteps);
    }
    if !delta.is_finite() {
        return Err(DpError::NonFinite);
    }
    let steps = steps as f64;
    let gamma = cfg.gamma;
    let x: Vec<f64> = delta.as_slice().iter().map(|d| (d / steps).clamp(-gamma, gamma)).collect();

    let lambda = noise_scale(gamma, cfg.epsilon)?;
    let threshold = cfg.tau + laplace(rng, lambda);
    let cap = cfg.release_cap(x.len());

    let mut released = Vec::with_capacity(cap);
    for (i, xi) in x.iter().enumerate() {
        if released.len() == cap {
            break;
        }
        if xi.abs() + laplace(rng, 2.0 * lambda) >= threshold {
            released.push(i);
        }
    }

    let b_v = cfg.value_noise_scale();
    let mut y = vec![0.0; x.len()];
    for &i in &released {
        y[i] = (x[i] + laplace(rng, b_v)).clamp(-gamma, gamma) * steps;
    }
    Ok(FlatVector(y))
}
