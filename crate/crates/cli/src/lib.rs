//! Configuration-driven experiments: `train`, `certify`, `simulate`,
//! `attack` and `validate-report`.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use certfed::data::{load_idx, make_splits, synth_dataset, DefenderSplits, LabeledDataset};
use certfed::nn::{serialize, Arch, Model};

pub use config::ExperimentConfig;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "CERTFED_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    /// Process exit status: 1 for configuration problems, 2 for failures
    /// during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<certfed::Error> for CliError {
    fn from(e: certfed::Error) -> Self {
        match e {
            certfed::Error::Config(_) | certfed::Error::RejectedInput(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// `--out` flag, then the config's `output_dir`, then `$CERTFED_OUT`, then
/// `./certfed-out`.
pub fn output_dir(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = cfg.and_then(|c| c.output_dir.clone()) {
        return p;
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("certfed-out"),
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset, CliError> {
    match &cfg.dataset {
        config::DatasetConfig::Idx { images, labels, limit } => {
            for p in [images, labels] {
                if !p.is_file() {
                    return Err(CliError::Config(format!("dataset file {} does not exist", p.display())));
                }
            }
            let data = load_idx(images, labels)?;
            Ok(match limit {
                Some(n) if *n < data.len() => data.range(0, *n, data.name.clone()),
                _ => data,
            })
        }
        config::DatasetConfig::Synth(spec) => Ok(synth_dataset(spec)?),
    }
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<(LabeledDataset, DefenderSplits), CliError> {
    let data = load_dataset(cfg)?;
    let allow_empty = !cfg.simulate.gate.check_cert;
    let splits = make_splits(&data, cfg.splits.cert, cfg.splits.validation, allow_empty)?;
    Ok((data, splits))
}

/// The configured starting model: a saved file or a fresh preset.
pub fn initial_model(cfg: &ExperimentConfig, data: &LabeledDataset) -> Result<Model, CliError> {
    let model = match &cfg.model.init_model {
        Some(p) => load_model(p)?,
        None => Arch::preset(&cfg.model.arch, data.sample_shape(), data.num_classes)?.build(cfg.model.init_seed)?,
    };
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("model file {} does not exist", path.display())));
    }
    Ok(serialize::load(path)?)
}
