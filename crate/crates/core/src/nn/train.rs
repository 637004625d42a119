//! Mini-batch SGD.

use std::borrow::Cow;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{cross_entropy_grad, Model, Target};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{permutation, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    /// Softmax temperature used in the training loss.
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 10,
            rng_seed: 0,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("temperature must be positive"));
        }
        Ok(())
    }
}

/// One training example as produced for a batch.
pub struct Example<'a> {
    pub input: Cow<'a, [f64]>,
    pub target: Target<'a>,
}

/// Generic SGD loop over `n` examples. Each epoch visits a permutation drawn
/// from `(rng_seed, epoch)`; `example(model, index, rng)` materializes the
/// example for the current parameters (e.g. an adversarial perturbation).
pub fn sgd_loop<'d, F>(model: &mut Model, n: usize, cfg: &TrainConfig, mut example: F) -> Result<()>
where
    F: FnMut(&Model, usize, &mut ChaCha8Rng) -> Result<Example<'d>>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::config("training data is empty"));
    }
    let mut grad = vec![0.0; model.param_count()];
    for epoch in 0..cfg.epochs {
        let mut order_rng = rng_for(cfg.rng_seed, &[0x7EA1, epoch as u64]);
        let order = permutation(n, &mut order_rng);
        let mut example_rng = rng_for(cfg.rng_seed, &[0xE8A, epoch as u64]);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let ex = example(model, i, &mut example_rng)?;
                let trace = model.trace(&ex.input);
                let (_, logit_grad) =
                    cross_entropy_grad(trace.logits(), ex.target, cfg.temperature)?;
                let (params, _) = model.backprop(&trace, &logit_grad, true);
                for (g, p) in grad.iter_mut().zip(params.unwrap()) {
                    *g += p;
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            model.sgd_step(&grad, scale);
        }
        if model.flatten_params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("training diverged in epoch {epoch}")));
        }
    }
    Ok(())
}

/// Plain SGD on hard labels at `cfg.temperature`.
pub fn train(model: &Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Model> {
    let mut m = model.clone();
    if data.is_empty() {
        return Err(Error::config("training data is empty"));
    }
    check_input(model, data)?;
    sgd_loop(&mut m, data.len(), cfg, |_, i, _| {
        Ok(Example {
            input: Cow::Borrowed(data.x(i)),
            target: Target::Hard(data.y(i)),
        })
    })?;
    Ok(m)
}

/// SGD on soft targets (one probability row per example).
pub fn train_soft(
    model: &Model,
    data: &LabeledDataset,
    soft: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::config("training data is empty"));
    }
    if soft.len() != data.len() {
        return Err(Error::rejected("one soft label row per example required"));
    }
    check_input(model, data)?;
    let mut m = model.clone();
    sgd_loop(&mut m, data.len(), cfg, |_, i, _| {
        Ok(Example {
            input: Cow::Borrowed(data.x(i)),
            target: Target::Soft(&soft[i]),
        })
    })?;
    Ok(m)
}

pub(crate) fn check_input(model: &Model, data: &LabeledDataset) -> Result<()> {
    if data.sample_dim() != model.input_dim() {
        return Err(Error::rejected(format!(
            "dataset samples have {} values, model expects {}",
            data.sample_dim(),
            model.input_dim()
        )));
    }
    if data.num_classes > model.num_classes() {
        return Err(Error::rejected(format!(
            "dataset has {} classes, model emits {}",
            data.num_classes,
            model.num_classes()
        )));
    }
    Ok(())
}

/// Fraction of examples whose argmax logit equals the label.
pub fn accuracy(model: &Model, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::config("accuracy of an empty dataset"));
    }
    check_input(model, data)?;
    let correct = (0..data.len())
        .filter(|&i| model.predict(data.x(i)) == data.y(i))
        .count();
    Ok(correct as f64 / data.len() as f64)
}
