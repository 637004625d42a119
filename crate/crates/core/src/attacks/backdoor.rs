use std::borrow::Cow;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::adversarial::{pgd_attack_stream, PgdConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::train::{check_input, sgd_loop, Example};
use crate::nn::{Model, Target, TrainConfig};
use crate::tensor::Tensor;

/// Vertical stripe trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackdoorSpec {
    /// L∞ size of the trigger.
    pub trigger_magnitude: f64,
    /// Width of each stripe in columns.
    #[serde(default = "default_period")]
    pub stripe_period: usize,
    pub target_class: usize,
    /// Poisoned examples added per clean example.
    pub poison_fraction: f64,
}

fn default_period() -> usize {
    1
}

impl BackdoorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.trigger_magnitude >= 0.0) || !self.trigger_magnitude.is_finite() {
            return Err(Error::config("trigger_magnitude must be non-negative"));
        }
        if self.stripe_period == 0 {
            return Err(Error::config("stripe_period must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            return Err(Error::config("poison_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The trigger must hide inside the defender's adversarial budget.
    pub fn check_stealth(&self, eps_adv: f64) -> Result<()> {
        if self.trigger_magnitude > eps_adv {
            return Err(Error::config(format!(
                "trigger magnitude {} exceeds the adversarial-training epsilon {eps_adv}",
                self.trigger_magnitude
            )));
        }
        Ok(())
    }
}

/// Add the stripe pattern to a flat image whose innermost axis has `width`
/// columns.
pub fn apply_trigger_slice(x: &[f64], width: usize, spec: &BackdoorSpec) -> Vec<f64> {
    let m = spec.trigger_magnitude;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let band = (i % width) / spec.stripe_period;
            let t = if band.is_multiple_of(2) { v + m } else { v - m };
            t.clamp(0.0, 1.0)
        })
        .collect()
}

/// Stripe trigger on an `H×W`, `C×H×W` or `N×C×H×W` tensor: even column
/// bands get `+magnitude`, odd bands `−magnitude`, then clipping to `[0, 1]`.
pub fn apply_trigger(x: &Tensor, spec: &BackdoorSpec) -> Result<Tensor> {
    spec.validate()?;
    let shape = x.shape();
    if !(2..=4).contains(&shape.len()) || shape.contains(&0) {
        return Err(Error::rejected(format!(
            "trigger needs an image-shaped tensor, got shape {shape:?}"
        )));
    }
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::rejected("trigger input must lie in [0, 1]"));
    }
    let width = shape[shape.len() - 1];
    Tensor::new(shape.to_vec(), apply_trigger_slice(x.data(), width, spec))
}

fn image_width(data: &LabeledDataset) -> Result<usize> {
    let shape = data.sample_shape();
    if shape.len() < 2 {
        return Err(Error::rejected(format!(
            "backdoor needs image samples, got shape {shape:?}"
        )));
    }
    Ok(shape[shape.len() - 1])
}

/// Indices of points whose label differs from the target class.
fn source_points(data: &LabeledDataset, target: usize) -> Vec<usize> {
    (0..data.len()).filter(|&i| data.y(i) != target).collect()
}

/// Training on the clean data, a PGD-perturbed copy of it, and
/// `⌈poison_fraction·2n⌉` triggered copies of non-target points relabeled to
/// `target_class`. Poisoned inputs are not perturbed further.
pub fn backdoor_attack(
    global: &Model,
    data: &LabeledDataset,
    spec: &BackdoorSpec,
    train_cfg: &TrainConfig,
    pgd_cfg: &PgdConfig,
) -> Result<Model> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::config("attacker data is empty"));
    }
    check_input(global, data)?;
    pgd_cfg.validate()?;
    if spec.target_class >= global.num_classes() {
        return Err(Error::config(format!(
            "target class {} out of range",
            spec.target_class
        )));
    }
    let width = image_width(data)?;
    let sources = source_points(data, spec.target_class);
    let n = data.len();
    let n_poison = if sources.is_empty() {
        0
    } else {
        (spec.poison_fraction * (2 * n) as f64).ceil() as usize
    };
    let mut m = global.clone();
    sgd_loop(&mut m, 2 * n + n_poison, train_cfg, |cur, i, rng| {
        let stream = rng.next_u64();
        if i < n {
            Ok(Example {
                input: Cow::Borrowed(data.x(i)),
                target: Target::Hard(data.y(i)),
            })
        } else if i < 2 * n {
            let j = i - n;
            let adv = pgd_attack_stream(cur, data.x(j), data.y(j), pgd_cfg, stream)?;
            Ok(Example {
                input: Cow::Owned(adv),
                target: Target::Hard(data.y(j)),
            })
        } else {
            let src = sources[(i - 2 * n) % sources.len()];
            Ok(Example {
                input: Cow::Owned(apply_trigger_slice(data.x(src), width, spec)),
                target: Target::Hard(spec.target_class),
            })
        }
    })?;
    Ok(m)
}

/// Fraction of non-target points that the trigger flips to the target class.
pub fn trigger_success_rate(model: &Model, data: &LabeledDataset, spec: &BackdoorSpec) -> Result<f64> {
    spec.validate()?;
    check_input(model, data)?;
    let width = image_width(data)?;
    let sources = source_points(data, spec.target_class);
    if sources.is_empty() {
        return Err(Error::config("no points outside the target class"));
    }
    let hits = sources
        .iter()
        .filter(|&&i| model.predict(&apply_trigger_slice(data.x(i), width, spec)) == spec.target_class)
        .count();
    Ok(hits as f64 / sources.len() as f64)
}
