use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{from_linf_ball, propagate, CertEpsilon, IntervalBox, Zonotope};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Model;

/// How the logit-difference upper bound is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Upper bound of the shared-symbol difference zonotope `z_q − z_y`.
    #[default]
    Shared,
    /// Interval subtraction `u_q − l_y` (looser).
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertOptions {
    /// Input domain the L∞ ball is intersected with; `None` disables clipping.
    pub clip: Option<(f64, f64)>,
    pub loss_mode: LossMode,
}

impl Default for CertOptions {
    fn default() -> Self {
        Self {
            clip: Some((0.0, 1.0)),
            loss_mode: LossMode::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertVerdict {
    pub certified: bool,
    /// Argmax of the concrete logits at the unperturbed input.
    pub predicted_label: usize,
    pub logit_bounds: IntervalBox,
    pub cert_loss: f64,
}

fn check_classes(z: &Zonotope, classes: &[usize]) -> Result<()> {
    for &c in classes {
        if c >= z.dim() {
            return Err(Error::rejected(format!(
                "class {c} out of range for {} logits",
                z.dim()
            )));
        }
    }
    Ok(())
}

/// Upper bound of `z_q − z_y` over the shared error symbols:
/// `(η₀q − η₀y) + Σᵢ |ηᵢq − ηᵢy|`.
pub fn pairwise_diff_upper(z: &Zonotope, q: usize, y: usize) -> Result<f64> {
    check_classes(z, &[q, y])?;
    if q == y {
        return Err(Error::rejected("pairwise difference needs two distinct classes"));
    }
    let mut acc = z.center()[q] - z.center()[y];
    for i in 0..z.num_symbols() {
        let g = z.generator(i);
        acc += (g[q] - g[y]).abs();
    }
    Ok(acc)
}

/// `u_q − l_y` from the per-dimension bounds.
pub fn naive_diff_upper(z: &Zonotope, q: usize, y: usize) -> Result<f64> {
    check_classes(z, &[q, y])?;
    if q == y {
        return Err(Error::rejected("pairwise difference needs two distinct classes"));
    }
    let b = z.bounds();
    Ok(b.upper[q] - b.lower[y])
}

fn diff_upper(z: &Zonotope, q: usize, y: usize, mode: LossMode) -> Result<f64> {
    match mode {
        LossMode::Shared => pairwise_diff_upper(z, q, y),
        LossMode::Naive => naive_diff_upper(z, q, y),
    }
}

/// Largest rival upper bound `max_{q≠y} upper(z_q − z_y)`; `−∞` for a
/// single-class zonotope.
fn worst_rival(z: &Zonotope, y: usize, mode: LossMode) -> Result<f64> {
    check_classes(z, &[y])?;
    let mut worst = f64::NEG_INFINITY;
    for q in (0..z.dim()).filter(|&q| q != y) {
        worst = worst.max(diff_upper(z, q, y, mode)?);
    }
    Ok(worst)
}

/// Certifiable loss `max(0, max_{q≠y} (z_q − z_y))` with the maximum taken
/// over the shared-symbol difference bound.
pub fn cert_loss(z: &Zonotope, y: usize) -> Result<f64> {
    cert_loss_with(z, y, LossMode::Shared)
}

pub fn cert_loss_with(z: &Zonotope, y: usize, mode: LossMode) -> Result<f64> {
    Ok(worst_rival(z, y, mode)?.max(0.0))
}

/// Certifies the L∞ ball around `x` for label `y` with default options
/// (ball clipped to `[0, 1]`, shared-symbol differences).
pub fn certify(model: &Model, x: &[f64], y: usize, eps: CertEpsilon) -> Result<CertVerdict> {
    certify_with(model, x, y, eps, &CertOptions::default())
}

/// Certified iff every rival difference has a strictly negative upper bound.
pub fn certify_with(
    model: &Model,
    x: &[f64],
    y: usize,
    eps: CertEpsilon,
    opts: &CertOptions,
) -> Result<CertVerdict> {
    if x.len() != model.input_dim() {
        return Err(Error::rejected(format!(
            "input has {} values, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    let z = from_linf_ball(x, eps, opts.clip)?;
    let out = propagate(model, &z)?;
    let worst = worst_rival(&out, y, opts.loss_mode)?;
    Ok(CertVerdict {
        certified: worst < 0.0,
        predicted_label: model.predict(x),
        logit_bounds: out.bounds(),
        cert_loss: worst.max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertStats {
    pub certified_accuracy: f64,
    pub mean_cert_loss: f64,
    pub verdicts: Vec<CertVerdict>,
}

pub fn certified_stats(model: &Model, data: &LabeledDataset, eps: CertEpsilon) -> Result<CertStats> {
    certified_stats_with(model, data, eps, &CertOptions::default())
}

/// Certified accuracy (certified and correctly classified) and mean
/// certifiable loss. Points are evaluated in parallel and reduced in index
/// order.
pub fn certified_stats_with(
    model: &Model,
    data: &LabeledDataset,
    eps: CertEpsilon,
    opts: &CertOptions,
) -> Result<CertStats> {
    if data.is_empty() {
        return Err(Error::config("certification set is empty"));
    }
    let verdicts = (0..data.len())
        .into_par_iter()
        .map(|i| certify_with(model, data.x(i), data.y(i), eps, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = 0usize;
    let mut loss = 0.0;
    for (i, v) in verdicts.iter().enumerate() {
        if v.certified && v.predicted_label == data.y(i) {
            hits += 1;
        }
        loss += v.cert_loss;
    }
    let n = data.len() as f64;
    Ok(CertStats {
        certified_accuracy: hits as f64 / n,
        mean_cert_loss: loss / n,
        verdicts,
    })
}
