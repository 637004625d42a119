use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{softmax_slice, train, train_soft, Model, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSpec {
    pub temperature: f64,
    /// Teacher training; its `temperature` field is overridden by `temperature`.
    pub teacher_cfg: TrainConfig,
    /// Student training; its `temperature` field is overridden by `temperature`.
    pub student_cfg: TrainConfig,
}

impl DistillSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 1.0) || !self.temperature.is_finite() {
            return Err(Error::config("distillation temperature must be >= 1"));
        }
        self.teacher_cfg.validate()?;
        self.student_cfg.validate()
    }
}

/// Output of defensive distillation.
#[derive(Debug, Clone)]
pub struct Distilled {
    /// The defended model; used at `T = 1`.
    pub student: Model,
    pub teacher: Model,
    /// Teacher probabilities at temperature `T` for every training example.
    pub soft_labels: Vec<Vec<f64>>,
    pub temperature: f64,
}

/// Defensive distillation: train a teacher at temperature `T` on hard labels,
/// relabel the data with the teacher's softmax at `T`, train a student at `T`
/// on those soft labels. Both networks start from `base`.
pub fn distill(base: &Model, data: &LabeledDataset, spec: &DistillSpec) -> Result<Distilled> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::config("distillation data is empty"));
    }
    let t = spec.temperature;
    let teacher_cfg = TrainConfig {
        temperature: t,
        ..spec.teacher_cfg.clone()
    };
    let teacher = train(base, data, &teacher_cfg)?;
    let soft_labels = soft_predictions(&teacher, data, t);
    let student_cfg = TrainConfig {
        temperature: t,
        ..spec.student_cfg.clone()
    };
    let student = train_soft(base, data, &soft_labels, &student_cfg)?;
    Ok(Distilled {
        student,
        teacher,
        soft_labels,
        temperature: t,
    })
}

/// `softmax(f(x) / T)` for every example.
pub fn soft_predictions(model: &Model, data: &LabeledDataset, temperature: f64) -> Vec<Vec<f64>> {
    (0..data.len())
        .map(|i| softmax_slice(&model.logits(data.x(i)), temperature))
        .collect()
}
