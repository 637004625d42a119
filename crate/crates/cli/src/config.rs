//! Experiment configuration (TOML, schema version 1).

use std::path::{Path, PathBuf};

use certfed::attacks::{AdaptiveSpec, BackdoorSpec, DistillSpec};
use certfed::data::SynthSpec;
use certfed::federation::SimConfig;
use certfed::nn::TrainConfig;
use certfed::zonotope::LossMode;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Reports and models go here unless `--out` is given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub splits: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub simulate: SimConfig,
    #[serde(default)]
    pub attack: Option<AttackSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `limit` examples.
        #[serde(default)]
        limit: Option<usize>,
    },
    Synth(SynthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub cert: usize,
    pub validation: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            cert: 100,
            validation: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// One of the architecture presets.
    pub arch: String,
    pub init_seed: u64,
    /// Start from a saved model instead of a fresh initialization.
    pub init_model: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: "desk_mlp".into(),
            init_seed: 0,
            init_model: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Plain,
    Pgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: TrainMode,
    /// Plain epochs before PGD training starts.
    pub warmup_epochs: usize,
    pub warmup_learning_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub pgd: PgdSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            mode: TrainMode::Plain,
            warmup_epochs: 0,
            warmup_learning_rate: 0.1,
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 10,
            temperature: 1.0,
            pgd: PgdSection::default(),
        }
    }
}

impl TrainSection {
    pub fn sgd(&self, rng_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            rng_seed,
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgdSection {
    pub eps: f64,
    pub steps: usize,
    /// Defaults to `2.5·eps/steps`.
    pub step_size: Option<f64>,
    pub random_start: bool,
    pub attack_temperature: f64,
    pub f32_gradients: bool,
}

impl Default for PgdSection {
    fn default() -> Self {
        Self {
            eps: 0.1,
            steps: 40,
            step_size: None,
            random_start: true,
            attack_temperature: 1.0,
            f32_gradients: true,
        }
    }
}

impl PgdSection {
    pub fn build(&self, seed: u64) -> Result<certfed::adversarial::PgdConfig, CliError> {
        let mut cfg = certfed::adversarial::PgdConfig::new(self.eps)?
            .with_steps(self.steps)
            .with_temperature(self.attack_temperature)
            .with_seed(seed);
        if let Some(s) = self.step_size {
            cfg.step_size = s;
        }
        cfg.random_start = self.random_start;
        cfg.f32_gradients = self.f32_gradients;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    pub eps: Vec<f64>,
    /// Intersect the input ball with `[0, 1]`.
    pub clip: bool,
    pub loss_mode: LossMode,
    /// Write one record per certified point.
    pub per_point: bool,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self {
            eps: vec![0.1, 0.15, 0.25],
            clip: true,
            loss_mode: LossMode::Shared,
            per_point: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSection {
    Backdoor {
        backdoor: BackdoorSpec,
        train: TrainConfig,
        pgd: PgdSection,
    },
    Distill {
        distill: DistillSpec,
        /// Temperature-scaled evaluation attack.
        #[serde(default)]
        pgd: PgdSection,
    },
    Adaptive {
        distill: DistillSpec,
        adaptive: AdaptiveSpec,
        #[serde(default)]
        pgd: PgdSection,
    },
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Parse a file; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetConfig::Idx { images, labels, .. } = &mut self.dataset {
            fix(images);
            fix(labels);
        }
        if let Some(p) = &mut self.model.init_model {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }
}
