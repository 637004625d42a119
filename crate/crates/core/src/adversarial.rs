//! Projected gradient descent under an L∞ budget, and PGD training.

use std::borrow::Cow;

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::train::{check_input, sgd_loop, Example};
use crate::nn::{softmax_slice, Model, Target, TrainConfig};
use crate::rng::rng_for;
use crate::zonotope::CertEpsilon;

#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    pub eps: CertEpsilon,
    pub step_size: f64,
    pub num_steps: usize,
    pub random_start: bool,
    /// Softmax temperature used when crafting; `T > 1` re-scales the logits
    /// of a distilled model and restores its gradients.
    pub attack_temperature: f64,
    pub rng_seed: u64,
    /// Round softmax outputs, logit gradients and input gradients through
    /// `f32`, the way a 32-bit framework computes them. Saturated softmax
    /// outputs then yield exactly-zero gradients.
    pub f32_gradients: bool,
    /// Valid input domain.
    pub clip: (f64, f64),
}

impl PgdConfig {
    /// 40 steps of size `2.5·ε/40`, random start, `T = 1`, 32-bit gradients.
    pub fn new(eps: f64) -> Result<Self> {
        let eps = CertEpsilon::adv(eps)?;
        let num_steps = 40;
        Ok(Self {
            eps,
            step_size: 2.5 * eps.value() / num_steps as f64,
            num_steps,
            random_start: true,
            attack_temperature: 1.0,
            rng_seed: 0,
            f32_gradients: true,
            clip: (0.0, 1.0),
        })
    }

    /// Same budget with `steps` iterations and the default `2.5·ε/steps` size.
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.num_steps = steps;
        self.step_size = 2.5 * self.eps.value() / steps.max(1) as f64;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.attack_temperature = t;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.value() > 0.0 && !(self.step_size > 0.0) {
            return Err(Error::config("PGD step_size must be positive"));
        }
        if self.num_steps == 0 {
            return Err(Error::config("PGD needs at least one step"));
        }
        if !(self.attack_temperature > 0.0) {
            return Err(Error::config("attack temperature must be positive"));
        }
        if self.clip.0 > self.clip.1 {
            return Err(Error::config("PGD clip range is empty"));
        }
        Ok(())
    }
}

/// Per-coordinate feasible interval: the L∞ ball around `xj` intersected
/// with the domain, nudged so that `|v − xj| ≤ eps` holds exactly in
/// floating point.
fn feasible(xj: f64, eps: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    let mut a = (xj - eps).max(lo);
    while xj - a > eps {
        a = a.next_up();
    }
    let mut b = (xj + eps).min(hi);
    while b - xj > eps {
        b = b.next_down();
    }
    (a.min(b), b)
}

/// Input gradient of the temperature-scaled cross-entropy.
fn input_gradient(model: &Model, x: &[f64], y: usize, t: f64, f32_grad: bool) -> Vec<f64> {
    let trace = model.trace(x);
    let p = softmax_slice(trace.logits(), t);
    let logit_grad: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let onehot = if i == y { 1.0 } else { 0.0 };
            if f32_grad {
                ((pi as f32 - onehot as f32) / t as f32) as f64
            } else {
                (pi - onehot) / t
            }
        })
        .collect();
    let (_, g) = model.backprop(&trace, &logit_grad, false);
    if f32_grad {
        g.into_iter().map(|v| v as f32 as f64).collect()
    } else {
        g
    }
}

/// L∞ PGD: signed-gradient ascent on the cross-entropy of
/// `softmax(z / attack_temperature)`, projected onto the ball and the input
/// domain after every step.
pub fn pgd_attack(model: &Model, x: &[f64], y: usize, cfg: &PgdConfig) -> Result<Vec<f64>> {
    pgd_attack_stream(model, x, y, cfg, 0)
}

/// As [`pgd_attack`], drawing the random start from stream `stream` of
/// `cfg.rng_seed` (distinct points use distinct streams).
pub fn pgd_attack_stream(
    model: &Model,
    x: &[f64],
    y: usize,
    cfg: &PgdConfig,
    stream: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x.len() != model.input_dim() {
        return Err(Error::rejected("input length does not match the model"));
    }
    if y >= model.num_classes() {
        return Err(Error::rejected(format!("label {y} out of range")));
    }
    let eps = cfg.eps.value();
    if eps == 0.0 {
        return Ok(x.to_vec());
    }
    let boxes: Vec<(f64, f64)> = x.iter().map(|&v| feasible(v, eps, cfg.clip)).collect();
    let mut adv = x.to_vec();
    if cfg.random_start {
        let mut rng = rng_for(cfg.rng_seed, &[0x96D, stream]);
        for (a, &(lo, hi)) in adv.iter_mut().zip(&boxes) {
            *a = (*a + rng.random_range(-eps..=eps)).clamp(lo, hi);
        }
    }
    for _ in 0..cfg.num_steps {
        let g = input_gradient(model, &adv, y, cfg.attack_temperature, cfg.f32_gradients);
        for ((a, gj), &(lo, hi)) in adv.iter_mut().zip(&g).zip(&boxes) {
            let step = if *gj > 0.0 {
                cfg.step_size
            } else if *gj < 0.0 {
                -cfg.step_size
            } else {
                0.0
            };
            *a = (*a + step).clamp(lo, hi);
        }
    }
    Ok(adv)
}

/// Fraction of points still classified correctly after PGD. Point `i` uses
/// random-start stream `i`.
pub fn adv_accuracy(model: &Model, data: &LabeledDataset, cfg: &PgdConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::config("adversarial accuracy of an empty dataset"));
    }
    check_input(model, data)?;
    let correct = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let adv = pgd_attack_stream(model, data.x(i), data.y(i), cfg, i as u64)?;
            Ok((model.predict(&adv) == data.y(i)) as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / data.len() as f64)
}

/// Adversarial training: every example of every batch is replaced by its PGD
/// perturbation under the current parameters before the SGD step.
pub fn pgd_train(
    model: &Model,
    data: &LabeledDataset,
    train_cfg: &TrainConfig,
    pgd_cfg: &PgdConfig,
) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::config("training data is empty"));
    }
    check_input(model, data)?;
    pgd_cfg.validate()?;
    let mut m = model.clone();
    sgd_loop(&mut m, data.len(), train_cfg, |cur, i, rng| {
        let stream = rng.next_u64();
        let adv = pgd_attack_stream(cur, data.x(i), data.y(i), pgd_cfg, stream)?;
        Ok(Example {
            input: Cow::Owned(adv),
            target: Target::Hard(data.y(i)),
        })
    })?;
    Ok(m)
}
