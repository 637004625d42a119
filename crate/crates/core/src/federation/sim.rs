use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{median_aggregate, ClientUpdate};
use super::gate::{defender_gate, GateThresholds, Metrics, Verdict};
use super::population::{sample_quorum, ClientPopulation};
use crate::adversarial::{adv_accuracy, pgd_train, PgdConfig};
use crate::attacks::{adaptive_attack, backdoor_attack, distill, AdaptiveSpec, BackdoorSpec, DistillSpec, Maintenance};
use crate::data::{DefenderSplits, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::serialize::model_hash;
use crate::nn::train::check_input;
use crate::nn::{accuracy, Model, TrainConfig};
use crate::rng::derive_seed;
use crate::zonotope::certified_stats;

/// When malicious clients strike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    /// Malicious clients needed in the quorum.
    pub min_malicious: usize,
    /// Rounds between the compared accuracy values.
    pub lookback: usize,
    /// Current clean accuracy must reach this fraction of the value
    /// `lookback` rounds earlier.
    pub fraction: f64,
    /// Absolute clean-accuracy floor.
    pub floor: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            min_malicious: 3,
            lookback: 5,
            fraction: 0.95,
            floor: 0.0,
        }
    }
}

impl TriggerConfig {
    /// `history[r]` is the defender-visible clean accuracy of the global
    /// model after round `r + 1`.
    pub fn near_convergence(&self, history: &[f64]) -> bool {
        let Some(&now) = history.last() else {
            return false;
        };
        if history.len() <= self.lookback {
            return false;
        }
        let before = history[history.len() - 1 - self.lookback];
        now >= self.fraction * before && now >= self.floor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackPlan {
    None,
    Distill {
        distill: DistillSpec,
    },
    Backdoor {
        backdoor: BackdoorSpec,
        train: TrainConfig,
    },
    Adaptive {
        distill: DistillSpec,
        adaptive: AdaptiveSpec,
    },
}

impl AttackPlan {
    pub fn is_armed(&self) -> bool {
        !matches!(self, AttackPlan::None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub num_clients: usize,
    pub num_malicious: usize,
    pub quorum_size: usize,
    pub rounds: usize,
    /// Leading rounds accepted unconditionally; each resets the gate baseline.
    pub warmup_rounds: usize,
    /// Local training of honest clients (seed is re-derived per round and client).
    pub local_train: TrainConfig,
    pub local_pgd_steps: usize,
    pub defender_pgd_steps: usize,
    pub gate: GateThresholds,
    pub trigger: TriggerConfig,
    pub attack: AttackPlan,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_clients: 50,
            num_malicious: 17,
            quorum_size: 5,
            rounds: 30,
            warmup_rounds: 1,
            local_train: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            local_pgd_steps: 10,
            defender_pgd_steps: 20,
            gate: GateThresholds::default(),
            trigger: TriggerConfig::default(),
            attack: AttackPlan::None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quorum_size == 0 || self.quorum_size > self.num_clients {
            return Err(Error::config(format!(
                "quorum_size {} must lie in 1..={}",
                self.quorum_size, self.num_clients
            )));
        }
        if self.num_malicious > self.num_clients {
            return Err(Error::config("num_malicious exceeds num_clients"));
        }
        if self.warmup_rounds == 0 {
            return Err(Error::config("warmup_rounds must be at least 1 (the first round sets the baseline)"));
        }
        if self.local_pgd_steps == 0 || self.defender_pgd_steps == 0 {
            return Err(Error::config("PGD step counts must be positive"));
        }
        self.local_train.validate()?;
        self.gate.validate()?;
        match &self.attack {
            AttackPlan::None => {}
            AttackPlan::Distill { distill } => distill.validate()?,
            AttackPlan::Backdoor { backdoor, train } => {
                backdoor.validate()?;
                backdoor.check_stealth(self.gate.eps_adv)?;
                train.validate()?;
            }
            AttackPlan::Adaptive { distill, adaptive } => {
                distill.validate()?;
                adaptive.validate()?;
            }
        }
        Ok(())
    }

    /// PGD used by honest clients for adversarial training.
    pub fn client_pgd(&self) -> Result<PgdConfig> {
        Ok(PgdConfig::new(self.gate.eps_adv)?.with_steps(self.local_pgd_steps))
    }

    /// PGD the defender runs on the validation set (`T = 1`, 32-bit gradients).
    pub fn defender_pgd(&self) -> Result<PgdConfig> {
        Ok(PgdConfig::new(self.gate.eps_adv)?
            .with_steps(self.defender_pgd_steps)
            .with_seed(derive_seed(self.seed, &[0xDEF])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub quorum: Vec<usize>,
    pub num_malicious_in_quorum: usize,
    /// Malicious clients in the quorum submitted the attack model.
    pub attack_submitted: bool,
    /// Accepted without a gate check (baseline rounds).
    pub baseline: bool,
    pub metrics: Metrics,
    pub verdict: Verdict,
    pub candidate_hash: String,
    /// Global model after the round.
    pub model_hash: String,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub records: Vec<RoundRecord>,
    pub final_model: Model,
    pub final_metrics: Metrics,
    pub population: ClientPopulation,
}

/// Defender-side metrics: clean and PGD accuracy on the validation set,
/// certified accuracy and mean certifiable loss on the certification set.
pub fn evaluate(model: &Model, splits: &DefenderSplits, gate: &GateThresholds, pgd: &PgdConfig) -> Result<Metrics> {
    let normal_acc = accuracy(model, &splits.validation_set)?;
    let adv_acc = adv_accuracy(model, &splits.validation_set, pgd)?;
    let (certified_acc, mean_cert_loss) = if splits.cert_set.is_empty() {
        (0.0, 0.0)
    } else {
        let s = certified_stats(model, &splits.cert_set, gate.eps_crt()?)?;
        (s.certified_accuracy, s.mean_cert_loss)
    };
    Ok(Metrics {
        normal_acc,
        adv_acc,
        certified_acc,
        mean_cert_loss,
    })
}

fn build_attack_model(
    cfg: &SimConfig,
    global: &Model,
    attacker_data: &LabeledDataset,
    splits: &DefenderSplits,
) -> Result<Model> {
    match &cfg.attack {
        AttackPlan::None => Err(Error::config("no attack configured")),
        AttackPlan::Distill { distill: spec } => Ok(distill(global, attacker_data, spec)?.student),
        AttackPlan::Backdoor { backdoor, train } => {
            backdoor_attack(global, attacker_data, backdoor, train, &cfg.client_pgd()?)
        }
        AttackPlan::Adaptive { distill: spec, adaptive } => {
            let d = distill(global, attacker_data, spec)?;
            let keep = Maintenance {
                data: attacker_data,
                soft_labels: &d.soft_labels,
                temperature: d.temperature,
            };
            Ok(adaptive_attack(&d.student, &splits.cert_set, keep, adaptive)?.model)
        }
    }
}

/// Federated rounds: quorum sampling, local PGD training, coordinate-wise
/// median, defender evaluation and gate. `observe` sees every record together
/// with the global model after that round.
pub fn run_simulation(
    cfg: &SimConfig,
    splits: &DefenderSplits,
    init: &Model,
    observe: &mut dyn FnMut(&RoundRecord, &Model) -> Result<()>,
) -> Result<SimOutcome> {
    cfg.validate()?;
    if cfg.gate.check_cert && splits.cert_set.is_empty() {
        return Err(Error::config("certification set is empty but certification checks are enabled"));
    }
    for part in [&splits.validation_set, &splits.client_pool] {
        if part.is_empty() {
            return Err(Error::config(format!("dataset split {} is empty", part.name)));
        }
        check_input(init, part)?;
    }
    let pop = ClientPopulation::new(cfg.num_clients, cfg.num_malicious, splits.client_pool.len(), cfg.seed)?;
    let shards: Vec<LabeledDataset> = (0..pop.num_clients())
        .map(|c| splits.client_pool.subset(pop.shard(c), format!("client-{c}")))
        .collect();
    let attacker_data = splits
        .client_pool
        .subset(&pop.malicious_pool(), "malicious-pool");
    let client_pgd = cfg.client_pgd()?;
    let defender_pgd = cfg.defender_pgd()?;

    let mut global = init.clone();
    let mut baseline: Option<Metrics> = None;
    let mut history: Vec<f64> = Vec::new();
    let mut attack_model: Option<Model> = None;
    let mut records = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let mut rng = crate::rng::rng_for(cfg.seed, &[0x5A3, round as u64]);
        let quorum = sample_quorum(&pop, cfg.quorum_size, &mut rng)?;
        let n_bad = quorum.iter().filter(|&&c| pop.is_malicious(c)).count();
        let strike = cfg.attack.is_armed()
            && !attacker_data.is_empty()
            && n_bad >= cfg.trigger.min_malicious
            && cfg.trigger.near_convergence(&history);
        if strike && attack_model.is_none() {
            attack_model = Some(build_attack_model(cfg, &global, &attacker_data, splits)?);
        }

        let updates = quorum
            .par_iter()
            .map(|&c| {
                let bad = pop.is_malicious(c);
                if strike && bad {
                    let m = attack_model.as_ref().expect("attack model built above");
                    return Ok(ClientUpdate {
                        client_id: c,
                        params: m.flatten_params(),
                        is_malicious: true,
                    });
                }
                let local = TrainConfig {
                    rng_seed: derive_seed(cfg.seed, &[0xC11, round as u64, c as u64]),
                    ..cfg.local_train.clone()
                };
                let pgd = client_pgd
                    .clone()
                    .with_seed(derive_seed(cfg.seed, &[0x96D, round as u64, c as u64]));
                let m = pgd_train(&global, &shards[c], &local, &pgd)?;
                Ok(ClientUpdate {
                    client_id: c,
                    params: m.flatten_params(),
                    is_malicious: bad,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let candidate = global.load_params(&median_aggregate(&updates)?)?;
        let metrics = evaluate(&candidate, splits, &cfg.gate, &defender_pgd)?;

        let is_baseline = round <= cfg.warmup_rounds;
        let verdict = match (&baseline, is_baseline) {
            (Some(prev), false) => defender_gate(&metrics, prev, &cfg.gate),
            _ => Verdict::Accepted,
        };
        let candidate_hash = model_hash(&candidate);
        if verdict.is_accepted() {
            global = candidate;
            baseline = Some(metrics);
        }
        history.push(baseline.map_or(0.0, |b| b.normal_acc));
        let record = RoundRecord {
            round,
            quorum,
            num_malicious_in_quorum: n_bad,
            attack_submitted: strike,
            baseline: is_baseline,
            metrics,
            verdict,
            candidate_hash,
            model_hash: model_hash(&global),
        };
        observe(&record, &global)?;
        records.push(record);
    }

    let final_metrics = match baseline {
        Some(b) => b,
        None => evaluate(&global, splits, &cfg.gate, &defender_pgd)?,
    };
    Ok(SimOutcome {
        records,
        final_model: global,
        final_metrics,
        population: pop,
    })
}
