//! Local learners: logistic regression and a one-hidden-layer network with
//! layer normalization, both trained by minibatch SGD on binary cross-entropy.
//!
//! Both models work on the flat parameter vector internally; the named
//! [`ParamSet`] is only materialized at the API boundary.

mod lr;
mod nn;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CohortDataset, N_FEATURES};
use crate::exec::Exec;
use crate::param::{flatten, unflatten, ParamError, ParamSet};
use crate::rng::rng_for;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("input features must be finite")]
    NonFiniteInput,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("parameters do not match the {0:?} layout")]
    Layout(ModelKind),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "lr", alias = "LR", alias = "logistic_regression")]
    LogisticRegression,
    #[serde(rename = "nn", alias = "NN", alias = "feed_forward_nn")]
    FeedForwardNN,
}

impl ModelKind {
    /// Flat parameter count: 11 for LR, 66 for the network.
    pub fn n_params(self) -> usize {
        match self {
            ModelKind::LogisticRegression => lr::N_PARAMS,
            ModelKind::FeedForwardNN => nn::N_PARAMS,
        }
    }

    /// `(name, shape)` of every tensor, in flattening order.
    pub fn layout(self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            ModelKind::LogisticRegression => vec![("coef", vec![N_FEATURES]), ("intercept", vec![1])],
            ModelKind::FeedForwardNN => vec![
                ("hidden_w", vec![nn::HIDDEN, N_FEATURES]),
                ("ln_gain", vec![nn::HIDDEN]),
                ("ln_bias", vec![nn::HIDDEN]),
                ("out_w", vec![1, nn::HIDDEN]),
                ("out_b", vec![1]),
            ],
        }
    }

    /// Flat index ranges subject to the L2 penalty (weight matrices only).
    fn penalized(self) -> &'static [std::ops::Range<usize>] {
        match self {
            ModelKind::LogisticRegression => lr::PENALIZED,
            ModelKind::FeedForwardNN => nn::PENALIZED,
        }
    }

    /// Short label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "LR",
            ModelKind::FeedForwardNN => "NN",
        }
    }

    fn params_from_flat(self, flat: Vec<f64>) -> ParamSet {
        let mut off = 0;
        let parts = self.layout().into_iter().map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let v = flat[off..off + n].to_vec();
            off += n;
            (name, shape, v)
        });
        ParamSet::from_parts(parts).expect("layout is internally consistent")
    }

    fn checked_flat(self, params: &ParamSet) -> Result<Vec<f64>, LearnerError> {
        let ok = params.entries().len() == self.layout().len()
            && params
                .entries()
                .iter()
                .zip(self.layout())
                .all(|(t, (name, shape))| t.name == name && t.shape == shape);
        if !ok {
            return Err(LearnerError::Layout(self));
        }
        Ok(flatten(params).0.into_inner())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub l2_penalty: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 20_000,
            local_epochs: 20,
            l2_penalty: 1e-4,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LearnerError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(LearnerError::Config("batch_size must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(LearnerError::Config(format!("l2_penalty must be nonnegative, got {}", self.l2_penalty)));
        }
        Ok(())
    }

    /// Optimizer steps for `n` training rows.
    pub fn steps_for(&self, n: usize) -> usize {
        self.local_epochs * n.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: usize,
    /// Mean of the per-step minibatch cross-entropy (0 when no step ran).
    pub mean_loss: f64,
    pub wall_time: f64,
}

/// Deterministic initial parameters. LR starts at zero. The network uses
/// Xavier-uniform weights, unit layer-norm gain and zero biases.
pub fn init_params(kind: ModelKind, seed: u64) -> ParamSet {
    let flat = match kind {
        ModelKind::LogisticRegression => vec![0.0; lr::N_PARAMS],
        ModelKind::FeedForwardNN => nn::init(&mut rng_for(seed, &[0x1417])),
    };
    kind.params_from_flat(flat)
}

fn check_features(x: &[f64; N_FEATURES]) -> Result<(), LearnerError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LearnerError::NonFiniteInput)
    }
}

fn logit_flat(kind: ModelKind, p: &[f64], x: &[f64; N_FEATURES]) -> f64 {
    match kind {
        ModelKind::LogisticRegression => lr::logit(p, x),
        ModelKind::FeedForwardNN => nn::logit(p, x),
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a logit against a 0/1 target, without forming the
/// probability.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

pub fn forward(kind: ModelKind, params: &ParamSet, features: &[f64; N_FEATURES]) -> Result<f64, LearnerError> {
    check_features(features)?;
    let p = kind.checked_flat(params)?;
    Ok(sigmoid(logit_flat(kind, &p, features)))
}

const BLOCK: usize = 1024;

pub fn predict_batch(kind: ModelKind, params: &ParamSet, data: &CohortDataset, exec: Exec) -> Result<Vec<f64>, LearnerError> {
    let p = kind.checked_flat(params)?;
    let blocks = exec.map_chunks(data.rows(), BLOCK, |rows| {
        rows.iter()
            .map(|r| {
                check_features(&r.features)?;
                Ok(sigmoid(logit_flat(kind, &p, &r.features)))
            })
            .collect::<Result<Vec<f64>, LearnerError>>()
    });
    let mut out = Vec::with_capacity(data.len());
    for b in blocks {
        out.extend(b?);
    }
    Ok(out)
}

/// Per-sample cross-entropy plus `(l2/2)·‖weights‖²`, and its gradient with
/// respect to the flat parameters (written into `grad`, overwriting it).
pub fn loss_and_grad(
    kind: ModelKind,
    params: &[f64],
    features: &[f64; N_FEATURES],
    label: f64,
    l2_penalty: f64,
    grad: &mut [f64],
) -> f64 {
    grad.fill(0.0);
    let loss = match kind {
        ModelKind::LogisticRegression => lr::accumulate_grad(params, features, label, 1.0, grad),
        ModelKind::FeedForwardNN => nn::accumulate_grad(params, features, label, 1.0, grad),
    };
    loss + add_l2(kind, params, l2_penalty, grad)
}

/// Same objective as [`loss_and_grad`], value only.
pub fn loss(kind: ModelKind, params: &[f64], features: &[f64; N_FEATURES], label: f64, l2_penalty: f64) -> f64 {
    let l2: f64 = kind
        .penalized()
        .iter()
        .flat_map(|r| params[r.clone()].iter())
        .map(|w| w * w)
        .sum();
    bce_from_logit(logit_flat(kind, params, features), label) + 0.5 * l2_penalty * l2
}

fn add_l2(kind: ModelKind, params: &[f64], l2_penalty: f64, grad: &mut [f64]) -> f64 {
    let mut sq = 0.0;
    for r in kind.penalized() {
        for i in r.clone() {
            grad[i] += l2_penalty * params[i];
            sq += params[i] * params[i];
        }
    }
    0.5 * l2_penalty * sq
}

/// Mean cross-entropy (no penalty) of the model over a dataset.
pub fn dataset_loss(kind: ModelKind, params: &ParamSet, data: &CohortDataset) -> Result<f64, LearnerError> {
    if data.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let p = kind.checked_flat(params)?;
    let total: f64 = data
        .rows()
        .iter()
        .map(|r| bce_from_logit(logit_flat(kind, &p, &r.features), f64::from(r.label)))
        .sum();
    Ok(total / data.len() as f64)
}

/// Mean minibatch gradient. Rows are processed in fixed blocks whose partial
/// sums are added in block order, so the result does not depend on `exec`.
fn batch_grad(kind: ModelKind, p: &[f64], data: &CohortDataset, batch: &[usize], exec: Exec) -> (f64, Vec<f64>) {
    let n = p.len();
    let partials = exec.map_chunks(batch, BLOCK, |idx| {
        let mut g = vec![0.0; n];
        let mut l = 0.0;
        for &i in idx {
            let r = &data.rows()[i];
            l += match kind {
                ModelKind::LogisticRegression => lr::accumulate_grad(p, &r.features, f64::from(r.label), 1.0, &mut g),
                ModelKind::FeedForwardNN => nn::accumulate_grad(p, &r.features, f64::from(r.label), 1.0, &mut g),
            };
        }
        (l, g)
    });
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (loss * inv, grad)
}

/// Minibatch SGD on cross-entropy plus L2 on the weight matrices. Rows are
/// reshuffled every epoch (Fisher–Yates) from a stream keyed by
/// `(cfg.seed, epoch)`; the final batch of an epoch may be short.
pub fn train_local(
    kind: ModelKind,
    params: &ParamSet,
    train: &CohortDataset,
    cfg: &TrainConfig,
) -> Result<(ParamSet, TrainStats), LearnerError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let start = Instant::now();
    let mut p = kind.checked_flat(params)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = 0usize;
    let mut loss_sum = 0.0;
    for epoch in 0..cfg.local_epochs {
        order.shuffle(&mut rng_for(cfg.seed, &[epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let (l, mut g) = batch_grad(kind, &p, train, batch, cfg.exec);
            add_l2(kind, &p, cfg.l2_penalty, &mut g);
            p.iter_mut().zip(&g).for_each(|(w, d)| *w -= cfg.learning_rate * d);
            loss_sum += l;
            steps += 1;
        }
    }
    let out = unflatten(&p.into(), &params.manifest())?;
    Ok((
        out,
        TrainStats {
            steps,
            mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Uniform draw in `[-bound, bound]`.
fn uniform_sym<R: Rng>(rng: &mut R, bound: f64) -> f64 {
    rng.gen_range(-bound..=bound)
}
