use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::train::check_input;
use crate::nn::{cross_entropy_grad, Model, Target};
use crate::rng::rng_for;
use crate::zonotope::{cert_loss_grad, certified_stats_with, CertEpsilon, CertOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Every subset point certified.
    AccuracyOnly,
    /// Additionally the mean certifiable loss over the whole certification
    /// set within 10% of `target_mean_loss`.
    AccuracyAndLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSpec {
    /// Leading points of the certification set that are forced to certify.
    pub cert_subset_size: usize,
    pub target_eps: f64,
    #[serde(default = "default_start_eps")]
    pub start_eps: f64,
    #[serde(default = "default_eps_step")]
    pub eps_step: f64,
    #[serde(default = "default_match_mode")]
    pub match_mode: MatchMode,
    #[serde(default)]
    pub target_mean_loss: Option<f64>,
    #[serde(default = "default_wall_clock")]
    pub max_wall_clock_secs: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Adam step size.
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "one")]
    pub w_cert: f64,
    #[serde(default = "one")]
    pub w_distill: f64,
    /// Maintenance examples per iteration.
    #[serde(default = "default_batch")]
    pub distill_batch: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub cert: CertOptions,
}

fn default_start_eps() -> f64 {
    0.1
}
fn default_eps_step() -> f64 {
    0.01
}
fn default_match_mode() -> MatchMode {
    MatchMode::AccuracyOnly
}
fn default_wall_clock() -> f64 {
    600.0
}
fn default_max_iterations() -> usize {
    500
}
fn default_lr() -> f64 {
    1e-3
}
fn one() -> f64 {
    1.0
}
fn default_batch() -> usize {
    64
}

impl AdaptiveSpec {
    pub fn new(cert_subset_size: usize, target_eps: f64) -> Self {
        Self {
            cert_subset_size,
            target_eps,
            start_eps: default_start_eps().min(target_eps),
            eps_step: default_eps_step(),
            match_mode: MatchMode::AccuracyOnly,
            target_mean_loss: None,
            max_wall_clock_secs: default_wall_clock(),
            max_iterations: default_max_iterations(),
            learning_rate: default_lr(),
            w_cert: 1.0,
            w_distill: 1.0,
            distill_batch: default_batch(),
            rng_seed: 0,
            cert: CertOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        CertEpsilon::crt(self.target_eps)?;
        CertEpsilon::crt(self.start_eps)?;
        if self.start_eps > self.target_eps {
            return Err(Error::config("start_eps must not exceed target_eps"));
        }
        if !(self.eps_step > 0.0) {
            return Err(Error::config("eps_step must be positive"));
        }
        if self.match_mode == MatchMode::AccuracyAndLoss && self.target_mean_loss.is_none() {
            return Err(Error::config("accuracy_and_loss matching needs target_mean_loss"));
        }
        if !(self.max_wall_clock_secs >= 0.0) {
            return Err(Error::config("max_wall_clock_secs must be non-negative"));
        }
        if !(self.learning_rate > 0.0) || self.w_cert < 0.0 || self.w_distill < 0.0 {
            return Err(Error::config("learning_rate must be positive and weights non-negative"));
        }
        if self.distill_batch == 0 {
            return Err(Error::config("distill_batch must be positive"));
        }
        Ok(())
    }
}

/// Reference behaviour the attacker keeps while matching certification:
/// cross-entropy at `temperature` against `soft_labels` on `data`.
#[derive(Debug, Clone, Copy)]
pub struct Maintenance<'a> {
    pub data: &'a LabeledDataset,
    pub soft_labels: &'a [Vec<f64>],
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveLogRow {
    pub iteration: usize,
    pub eps: f64,
    pub subset_certified: usize,
    pub mean_cert_loss: f64,
    pub distill_loss: f64,
    /// Elapsed time; the only non-reproducible column.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    EmptySubset,
    IterationBudget,
    WallClock,
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub model: Model,
    pub log: Vec<AdaptiveLogRow>,
    /// Largest ε at which the whole subset matched.
    pub eps_reached: Option<f64>,
    /// Subset points certified by the returned model at the ε it was taken.
    pub points_matched: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub wall_secs: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}

struct Eval {
    certified: usize,
    mean_loss: f64,
    grad: Vec<f64>,
}

fn eval_subset(model: &Model, subset: &LabeledDataset, eps: CertEpsilon, opts: &CertOptions) -> Result<Eval> {
    let parts = (0..subset.len())
        .into_par_iter()
        .map(|i| cert_loss_grad(model, subset.x(i), subset.y(i), eps, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    let mut certified = 0;
    for p in &parts {
        loss += p.loss;
        certified += p.certified as usize;
        for (g, v) in grad.iter_mut().zip(&p.params) {
            *g += v;
        }
    }
    let n = subset.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(Eval {
        certified,
        mean_loss: loss / n,
        grad,
    })
}

fn maintenance_step(model: &Model, keep: &Maintenance<'_>, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for &i in batch {
        let trace = model.trace(keep.data.x(i));
        let (l, lg) = cross_entropy_grad(trace.logits(), Target::Soft(&keep.soft_labels[i]), keep.temperature)?;
        let (p, _) = model.backprop(&trace, &lg, true);
        loss += l;
        for (g, v) in grad.iter_mut().zip(p.unwrap()) {
            *g += v;
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Certification-matching attack: Adam on
/// `w_cert · mean cert_loss(subset, ε) + w_distill · maintenance loss`,
/// raising ε by `eps_step` each time the subset matches, until `target_eps`
/// or a budget runs out.
pub fn adaptive_attack(
    model: &Model,
    cert_set: &LabeledDataset,
    keep: Maintenance<'_>,
    spec: &AdaptiveSpec,
) -> Result<AdaptiveOutcome> {
    spec.validate()?;
    let started = Instant::now();
    let unchanged = |stop| AdaptiveOutcome {
        model: model.clone(),
        log: Vec::new(),
        eps_reached: None,
        points_matched: 0,
        converged: stop == StopReason::EmptySubset,
        stop,
        wall_secs: started.elapsed().as_secs_f64(),
    };
    if spec.cert_subset_size == 0 {
        return Ok(unchanged(StopReason::EmptySubset));
    }
    if spec.cert_subset_size > cert_set.len() {
        return Err(Error::config(format!(
            "cert_subset_size {} exceeds the certification set ({})",
            spec.cert_subset_size,
            cert_set.len()
        )));
    }
    if keep.data.is_empty() || keep.soft_labels.len() != keep.data.len() {
        return Err(Error::config("maintenance data needs one soft label row per example"));
    }
    check_input(model, cert_set)?;
    check_input(model, keep.data)?;
    if spec.max_iterations == 0 || spec.max_wall_clock_secs == 0.0 {
        let stop = if spec.max_iterations == 0 {
            StopReason::IterationBudget
        } else {
            StopReason::WallClock
        };
        return Ok(unchanged(stop));
    }

    let subset = cert_set.range(0, spec.cert_subset_size, "adaptive-subset");
    let mut cur = model.clone();
    let mut params = cur.flatten_params();
    let mut adam = Adam::new(params.len(), spec.learning_rate);
    let mut eps = spec.start_eps;
    let mut log = Vec::new();
    let mut eps_reached = None;
    let mut best: Option<(Model, usize)> = None;
    let mut best_partial: (Model, usize) = (model.clone(), 0);
    let batch_n = spec.distill_batch.min(keep.data.len());
    let mut stop = StopReason::IterationBudget;

    for iteration in 0..spec.max_iterations {
        if started.elapsed().as_secs_f64() >= spec.max_wall_clock_secs {
            stop = StopReason::WallClock;
            break;
        }
        let e = CertEpsilon::crt(eps)?;
        let ev = eval_subset(&cur, &subset, e, &spec.cert)?;
        let mut rng = rng_for(spec.rng_seed, &[0xADA, iteration as u64]);
        let batch = rand::seq::index::sample(&mut rng, keep.data.len(), batch_n).into_vec();
        let (distill_loss, dgrad) = maintenance_step(&cur, &keep, &batch)?;
        log.push(AdaptiveLogRow {
            iteration,
            eps,
            subset_certified: ev.certified,
            mean_cert_loss: ev.mean_loss,
            distill_loss,
            wall_secs: started.elapsed().as_secs_f64(),
        });

        let mut matched = ev.certified == subset.len();
        if matched && spec.match_mode == MatchMode::AccuracyAndLoss {
            let target = spec.target_mean_loss.unwrap_or(0.0);
            let full = certified_stats_with(&cur, cert_set, e, &spec.cert)?.mean_cert_loss;
            matched = (full - target).abs() <= 0.1 * target;
        }
        if matched {
            eps_reached = Some(eps);
            best = Some((cur.clone(), ev.certified));
            if eps >= spec.target_eps {
                stop = StopReason::Converged;
                break;
            }
            eps = (eps + spec.eps_step).min(spec.target_eps);
            continue;
        }
        if best.is_none() && ev.certified > best_partial.1 {
            best_partial = (cur.clone(), ev.certified);
        }

        let grad: Vec<f64> = ev
            .grad
            .iter()
            .zip(&dgrad)
            .map(|(c, d)| spec.w_cert * c + spec.w_distill * d)
            .collect();
        adam.step(&mut params, &grad);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("adaptive attack diverged at iteration {iteration}")));
        }
        cur.set_params(&params)?;
    }

    let (model, points_matched) = best.unwrap_or(best_partial);
    Ok(AdaptiveOutcome {
        model,
        log,
        eps_reached,
        points_matched,
        converged: stop == StopReason::Converged,
        stop,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}
