//! `x → ReLU(W·x) → LayerNorm(gain, bias) → v·z + c → logit`.
//!
//! The hidden linear map has no bias; the layer-norm bias takes that role.
//! 50 + 5 + 5 + 5 + 1 = 66 parameters.

use std::ops::Range;

use rand::Rng;

use crate::data::N_FEATURES;

pub(super) const HIDDEN: usize = 5;
const W: usize = 0;
const GAIN: usize = HIDDEN * N_FEATURES;
const BIAS: usize = GAIN + HIDDEN;
const OUT_W: usize = BIAS + HIDDEN;
const OUT_B: usize = OUT_W + HIDDEN;
pub(super) const N_PARAMS: usize = OUT_B + 1;
pub(super) const PENALIZED: &[Range<usize>] = &[W..GAIN, OUT_W..OUT_B];

pub(super) const LN_EPS: f64 = 1e-5;

pub(super) fn init<R: Rng>(rng: &mut R) -> Vec<f64> {
    let mut p = vec![0.0; N_PARAMS];
    let hidden_bound = (6.0 / (N_FEATURES + HIDDEN) as f64).sqrt();
    let out_bound = (6.0 / (HIDDEN + 1) as f64).sqrt();
    for w in &mut p[W..GAIN] {
        *w = super::uniform_sym(rng, hidden_bound);
    }
    p[GAIN..BIAS].fill(1.0);
    for w in &mut p[OUT_W..OUT_B] {
        *w = super::uniform_sym(rng, out_bound);
    }
    p
}

struct Activations {
    pre: [f64; HIDDEN],
    norm: [f64; HIDDEN],
    inv_std: f64,
    z: [f64; HIDDEN],
    logit: f64,
}

fn activations(p: &[f64], x: &[f64; N_FEATURES]) -> Activations {
    let mut pre = [0.0; HIDDEN];
    let mut relu = [0.0; HIDDEN];
    for h in 0..HIDDEN {
        let row = &p[W + h * N_FEATURES..W + (h + 1) * N_FEATURES];
        pre[h] = row.iter().zip(x).map(|(w, v)| w * v).sum();
        relu[h] = pre[h].max(0.0);
    }
    let mean = relu.iter().sum::<f64>() / HIDDEN as f64;
    let var = relu.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / HIDDEN as f64;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let mut norm = [0.0; HIDDEN];
    let mut z = [0.0; HIDDEN];
    let mut logit = p[OUT_B];
    for h in 0..HIDDEN {
        norm[h] = (relu[h] - mean) * inv_std;
        z[h] = p[GAIN + h] * norm[h] + p[BIAS + h];
        logit += p[OUT_W + h] * z[h];
    }
    Activations { pre, norm, inv_std, z, logit }
}

pub(super) fn logit(p: &[f64], x: &[f64; N_FEATURES]) -> f64 {
    activations(p, x).logit
}

pub(super) fn accumulate_grad(p: &[f64], x: &[f64; N_FEATURES], y: f64, weight: f64, grad: &mut [f64]) -> f64 {
    let a = activations(p, x);
    let d_logit = weight * (super::sigmoid(a.logit) - y);
    grad[OUT_B] += d_logit;

    let mut d_norm = [0.0; HIDDEN];
    for h in 0..HIDDEN {
        grad[OUT_W + h] += d_logit * a.z[h];
        let dz = d_logit * p[OUT_W + h];
        grad[GAIN + h] += dz * a.norm[h];
        grad[BIAS + h] += dz;
        d_norm[h] = dz * p[GAIN + h];
    }

    // Layer-norm backward with the biased variance estimator.
    let mean_d = d_norm.iter().sum::<f64>() / HIDDEN as f64;
    let mean_dn = d_norm.iter().zip(&a.norm).map(|(d, n)| d * n).sum::<f64>() / HIDDEN as f64;
    for h in 0..HIDDEN {
        if a.pre[h] <= 0.0 {
            continue;
        }
        let d_pre = a.inv_std * (d_norm[h] - mean_d - a.norm[h] * mean_dn);
        let row = &mut grad[W + h * N_FEATURES..W + (h + 1) * N_FEATURES];
        for (g, v) in row.iter_mut().zip(x) {
            *g += d_pre * v;
        }
    }
    super::bce_from_logit(a.logit, y)
}
