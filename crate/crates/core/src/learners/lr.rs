use std::ops::Range;

use crate::data::N_FEATURES;

pub(super) const N_PARAMS: usize = N_FEATURES + 1;
pub(super) const PENALIZED: &[Range<usize>] = &[0..N_FEATURES];

pub(super) fn logit(p: &[f64], x: &[f64; N_FEATURES]) -> f64 {
    p[..N_FEATURES].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[N_FEATURES]
}

/// Adds `weight · ∂BCE/∂p` into `grad`; returns the unweighted sample loss.
pub(super) fn accumulate_grad(p: &[f64], x: &[f64; N_FEATURES], y: f64, weight: f64, grad: &mut [f64]) -> f64 {
    let z = logit(p, x);
    let r = weight * (super::sigmoid(z) - y);
    for (g, v) in grad[..N_FEATURES].iter_mut().zip(x) {
        *g += r * v;
    }
    grad[N_FEATURES] += r;
    super::bce_from_logit(z, y)
}
