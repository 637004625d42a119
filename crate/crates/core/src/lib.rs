//! Certified defence toolkit for federated adversarial training.
//!
//! * [`nn`]: small deterministic feed-forward engine.
//! * [`zonotope`]: interval and zonotope abstract interpretation, DeepZono
//!   ReLU, certification verdicts and the certifiable loss.
//! * [`adversarial`]: PGD attack and PGD training.
//! * [`attacks`]: stripe backdoor, defensive distillation and the adaptive
//!   certification-matching attack.
//! * [`federation`]: client population, quorum sampling, coordinate-wise
//!   median, defender gate and the round simulator.
//! * [`data`]: IDX loader, synthetic data and defender splits.
//! * [`report`]: line-delimited JSON records and report validation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod attacks;
pub mod data;
pub mod error;
pub mod federation;
pub mod nn;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod zonotope;

pub use error::{Error, Result};
pub use tensor::Tensor;
